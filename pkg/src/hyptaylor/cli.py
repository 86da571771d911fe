"""Command-line entry point.

Subcommands: ``approx`` (series error curves), ``bench`` (latency CSV),
``train`` (one run, JSON report), ``ablate`` (sweep over one setting) and
``gen-tree`` (write a synthetic tree in the plain-text graph format).

Exit codes: 0 success, 2 input error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bench import OPS, rows_to_csv, run_bench
from .core import ACTIVATION_MODES, FN_IDS, PtseConfig, exact_kernel, ptse_kernel
from .errors import DomainError, HypTaylorError
from .graph import SELF_LOOP_POLICIES, Graph, gen_tree, load_citation_graph, write_citation_graph
from .layers import ACTIVATIONS
from .models import MODELS
from .report import DIVERGED, RunReport, write_atomic
from .train import OPTIMIZERS, TASKS, TrainConfig, train_loop

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3
SWEEP_AXES = ("n", "lambda", "optimizer")
THREADS_ENV = "HYPTAYLOR_THREADS"


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


# ---------------------------------------------------------------- parsing helpers


def int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_range(text: str) -> np.ndarray:
    """``lo:hi:step`` to an inclusive grid."""
    try:
        lo, hi, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise InputError(f"range must be lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise InputError(f"range needs lo <= hi and step > 0, got {text!r}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def parse_sweep(text: str) -> tuple[str, list]:
    axis, sep, raw = text.partition("=")
    axis = axis.strip()
    if not sep or axis not in SWEEP_AXES:
        raise InputError(f"sweep must be one of {', '.join(a + '=...' for a in SWEEP_AXES)}; got {text!r}")
    try:
        if axis == "n":
            if ":" in raw:
                lo, hi = (int(t) for t in raw.split(":"))
                values = list(range(lo, hi + 1))
            else:
                values = int_list(raw)
        elif axis == "lambda":
            values = [float(t) for t in str_list(raw)]
        else:
            values = str_list(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise InputError(f"cannot parse sweep values {raw!r}") from None
    if not values:
        raise InputError("sweep has no values")
    if len(set(values)) != len(values):
        raise InputError("sweep values must be distinct")
    return axis, sorted(values)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value) if np.isfinite(value) else DIVERGED
    return str(value)


def _emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        write_atomic(out, text)


# ---------------------------------------------------------------- approx


def cmd_approx(args) -> int:
    xs = parse_range(args.range)
    if args.fn == "artanh" and np.max(np.abs(xs)) >= 1:
        raise InputError("artanh range must satisfy |x| < 1")
    if args.fn == "arcosh" and xs[0] < 1:
        raise InputError("arcosh range must satisfy lo >= 1")
    exact = exact_kernel(args.fn, xs)
    approx, errors = [], []
    for n in args.n_list:
        cfg = PtseConfig(n=n)
        p = ptse_kernel(args.fn, xs, cfg)
        approx.append(p)
        errors.append(np.abs(exact - p) / np.abs(exact + cfg.eps))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "exact"] + [f"ptse_n{n}" for n in args.n_list] + [f"eta_n{n}" for n in args.n_list])
    for i, x in enumerate(xs):
        w.writerow([repr(float(x)), repr(float(exact[i]))]
                   + [repr(float(col[i])) for col in approx] + [repr(float(col[i])) for col in errors])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    ops = str_list(args.op)
    bad = [op for op in ops if op not in OPS]
    if bad:
        raise InputError(f"unknown op {bad[0]!r}; expected one of {', '.join(OPS)}")
    rows = run_bench(ops, args.dims, args.n_list, reps=args.reps, warmup=args.warmup, seed=args.seed)
    _emit(rows_to_csv(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- train / ablate


def load_graph(args) -> Graph:
    if args.synthetic:
        if args.edges or args.features or args.labels:
            raise InputError("give either --synthetic or dataset files, not both")
        return gen_tree(args.depth, args.branch, args.feature_dim, seed=args.data_seed)
    missing = [name for name in ("edges", "features", "labels") if not getattr(args, name)]
    if missing:
        raise InputError(f"missing dataset file(s): {', '.join('--' + m for m in missing)} (or use --synthetic tree)")
    return load_citation_graph(args.edges, args.features, args.labels, args.splits, seed=args.data_seed)


def train_config(args, **overrides) -> TrainConfig:
    cfg = PtseConfig(n=args.n, c=args.c, lam=args.lam, activation_mode=args.activation_mode)
    fields = dict(
        model=args.model, task=args.task, epochs=args.epochs, learning_rate=args.learning_rate,
        optimizer=args.optimizer, seed=args.seed, cfg=cfg, hidden=args.hidden, layers=args.layers,
        patience=args.patience, self_loops=args.self_loops, init_scale=args.init_scale,
        reg_mode=args.reg_mode, activation=args.activation,
        feature_scale=None if args.feature_scale <= 0 else args.feature_scale, time_limit=args.time_limit,
    )
    fields.update(overrides)
    return TrainConfig(**fields)


def _dataset_echo(args) -> dict:
    if args.synthetic:
        return {"synthetic": args.synthetic, "depth": args.depth, "branch": args.branch,
                "feature_dim": args.feature_dim, "data_seed": args.data_seed}
    return {"edges": args.edges, "features": args.features, "labels": args.labels,
            "splits": args.splits, "data_seed": args.data_seed}


def headline_metric(config: TrainConfig) -> str:
    return "test_accuracy" if config.task == "node-class" else "test_roc_auc"


def cmd_train(args) -> int:
    graph = load_graph(args)
    config = train_config(args)
    report = train_loop(graph, config, command="train")
    report.config["dataset"] = _dataset_echo(args)
    if args.out:
        write_atomic(args.out, report.to_json())
    metric = headline_metric(config)
    split_metrics = [metric.replace("test_", f"{s}_") for s in ("train", "val", "test")]
    for name in split_metrics:
        print(f"metric={name} value={_fmt(report.metrics.get(name, float('nan')))}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def _run_point(graph: Graph, config: TrainConfig) -> RunReport:
    return train_loop(graph, config, command="ablate")


def _override(axis: str, value, base: TrainConfig) -> dict:
    if axis == "n":
        return {"cfg": base.cfg.with_(n=int(value))}
    if axis == "lambda":
        return {"cfg": base.cfg.with_(lam=float(value))}
    return {"optimizer": value}


def cmd_ablate(args) -> int:
    axis, values = parse_sweep(args.sweep)
    graph = load_graph(args)
    base = train_config(args)
    configs = [train_config(args, **_override(axis, v, base)) for v in values]
    threads = _threads()
    if threads > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(configs))) as pool:
            reports = list(pool.map(_run_point, [graph] * len(configs), configs))
    else:
        reports = [_run_point(graph, c) for c in configs]

    out = Path(args.out)
    metric = headline_metric(base)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "value", "metric", "score", "status", "report"])
    for value, report in zip(values, reports):
        report.config["dataset"] = _dataset_echo(args)
        report.config["sweep"] = {"axis": axis, "value": value}
        name = f"run_{axis}={value}.json"
        write_atomic(out / name, report.to_json())
        score = report.metrics.get(metric, float("nan"))
        status = DIVERGED if report.diverged or not np.isfinite(score) else "ok"
        w.writerow([axis, value, metric, _fmt(score) if status == "ok" else DIVERGED, status, name])
    write_atomic(out / "summary.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise InputError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


# ---------------------------------------------------------------- gen-tree


def cmd_gen_tree(args) -> int:
    graph = gen_tree(args.depth, args.branch, args.feature_dim, seed=args.seed)
    paths = write_citation_graph(graph, args.out)
    for kind, path in paths.items():
        print(f"{kind}={path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--task", choices=TASKS, default="link-pred")
    data = p.add_argument_group("dataset")
    data.add_argument("--synthetic", choices=["tree"], help="generate a synthetic dataset")
    data.add_argument("--depth", type=int, default=5)
    data.add_argument("--branch", type=int, default=3)
    data.add_argument("--feature-dim", type=int, default=16)
    data.add_argument("--data-seed", type=int, default=0, help="seed for generation and default splits")
    data.add_argument("--edges")
    data.add_argument("--features")
    data.add_argument("--labels")
    data.add_argument("--splits")
    tr = p.add_argument_group("training")
    tr.add_argument("--model", choices=MODELS, default="tgcn")
    tr.add_argument("--epochs", type=int, default=500)
    tr.add_argument("--learning-rate", "--lr", type=float, default=0.01)
    tr.add_argument("--optimizer", choices=OPTIMIZERS, default="adam")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--hidden", type=int, default=16)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--patience", type=int, default=100)
    tr.add_argument("--self-loops", choices=SELF_LOOP_POLICIES, default="all")
    tr.add_argument("--init-scale", type=float, default=0.1)
    tr.add_argument("--reg-mode", choices=["loss-penalty", "literal"], default="loss-penalty")
    tr.add_argument("--activation", choices=sorted(ACTIVATIONS), default="tanh")
    tr.add_argument("--feature-scale", type=float, default=0.5, help="largest input row norm; <= 0 disables")
    tr.add_argument("--time-limit", type=float, default=None, help="wall-clock budget in seconds")
    ser = p.add_argument_group("series")
    ser.add_argument("--n", type=int, default=3, help="number of series terms")
    ser.add_argument("--c", type=float, default=1.0, help="curvature")
    ser.add_argument("--lambda", dest="lam", type=float, default=1e-3, help="L1 regularization weight")
    ser.add_argument("--activation-mode", choices=ACTIVATION_MODES, default="literal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyptaylor", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("approx", help="export series values and relative errors on a grid")
    p.add_argument("--fn", choices=FN_IDS, required=True)
    p.add_argument("--n-list", type=int_list, default=[1, 2, 3])
    p.add_argument("--range", required=True, help="lo:hi:step, inclusive")
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("bench", help="time kernels and layer primitives")
    p.add_argument("--op", default="tanh-kernel", help=f"comma list from: {', '.join(OPS)}")
    p.add_argument("--dims", type=int_list, default=[64, 256, 1024])
    p.add_argument("--n-list", type=int_list, default=[1, 2, 3, 5])
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train one model and write a JSON report")
    _add_train_flags(p)
    p.add_argument("--out", help="report path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="sweep one setting; one run per value")
    _add_train_flags(p)
    p.add_argument("--sweep", required=True, help="n=1:5 | lambda=1e-4,1e-3 | optimizer=adam,radam")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-tree", help="write a synthetic tree dataset")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--branch", type=int, default=3)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_tree)
    return parser


def _config_defaults(subparser: argparse.ArgumentParser, path: str) -> dict:
    """Read a key = value file into typed parser defaults.

    Keys use flag names with or without the leading dashes; section headers
    are optional and only group keys.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        cp.read_string(text if text.lstrip().startswith("[") else "[train]\n" + text, source=path)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    actions = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            actions[opt.lstrip("-").replace("-", "_")] = action
    defaults = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            name = key.lstrip("-").replace("-", "_")
            action = actions.get(name)
            if action is None or name in ("config", "help"):
                raise InputError(f"{path}: unknown key {key!r}")
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise InputError(f"{path}: bad value for {key!r}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise InputError(f"{path}: {key} must be one of {', '.join(map(str, action.choices))}")
            defaults[action.dest] = value
    return defaults


def _join_negative_range(argv: list[str]) -> list[str]:
    """Let ``--range -1:1:0.5`` through; argparse would read the value as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--range":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--range={nxt}")
        else:
            out.append(tok)
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = _join_negative_range(list(sys.argv[1:] if argv is None else argv))
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**_config_defaults(sub, args.config))
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except (InputError, HypTaylorError, DomainError, OSError, ValueError) as exc:
        print(f"hyptaylor: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
