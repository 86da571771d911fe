"""Losses, metrics, and the full-batch training loop."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .core import PtseConfig
from .errors import ConfigError, HypTaylorError, NumericalError
from .graph import Graph, gen_tree
from .models import MODELS, Model, build_model
from .optim import OptState, adam_step, radam_lite_step
from .report import RunReport

TASKS = ("node-class", "link-pred")
OPTIMIZERS = ("adam", "radam")


@dataclass(frozen=True)
class TrainConfig:
    model: str = "tgcn"
    task: str = "link-pred"
    epochs: int = 500
    learning_rate: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    cfg: PtseConfig = field(default_factory=PtseConfig)
    hidden: int = 16
    layers: int = 2
    patience: int = 100
    self_loops: str = "all"
    init_scale: float = 0.1
    reg_mode: str = "loss-penalty"
    activation: str = "tanh"
    feature_scale: float | None = 0.5
    time_limit: float | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError("epochs must be an integer >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- metrics


def accuracy(pred, labels, mask=None) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if mask is not None:
        pred, labels = pred[mask], labels[mask]
    if pred.size == 0:
        raise ConfigError("accuracy over an empty selection")
    return float(np.mean(pred == labels))


def roc_auc(scores, truth) -> float:
    """Rank-statistic AUC with tied scores sharing their average rank."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("ROC-AUC is undefined for single-class truth")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ConfigError("node classification mask is empty")
    logp = ad.log_softmax(ad.gather_rows(logits, idx))
    onehot = np.zeros(logp.shape)
    onehot[np.arange(idx.size), np.asarray(labels)[idx]] = 1.0
    return -1.0 * ad.sum(logp * Tensor(onehot)) / float(idx.size)


def node_class_loss(logits: Tensor, labels, mask, penalties=()) -> Tensor:
    """Mean cross-entropy over masked nodes plus the accumulated penalties."""
    loss = cross_entropy(logits, labels, mask)
    for p in penalties:
        loss = loss + p
    return loss


T_INIT = 1.0
R_INIT = 2.0


class FermiDirac:
    """score = 1 / (exp((d^2 - r) / t) + 1) with learnable r and t = softplus(t_raw) > 0."""

    def __init__(self, r: float = R_INIT, t: float = T_INIT):
        self.r = Tensor(np.array(r), requires_grad=True)
        self.t_raw = Tensor(np.array(math.log(math.expm1(t))), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.r, self.t_raw]

    def logit(self, d2) -> Tensor:
        return (self.r - d2) / ad.softplus(self.t_raw)

    def score(self, d2) -> Tensor:
        return ad.sigmoid(self.logit(d2))


def link_score(u, v, cfg: PtseConfig, r: float = R_INIT, t: float = T_INIT):
    """Fermi-Dirac link probability from the series distance."""
    from .gyro import dist1_ptse

    d = np.asarray(dist1_ptse(np.asarray(u, dtype=float), np.asarray(v, dtype=float), cfg))
    return 1.0 / (np.exp((d * d - r) / t) + 1.0)


def _pair_d2(model: Model, z: Tensor, pairs: np.ndarray) -> Tensor:
    d = model.distance(ad.gather_rows(z, pairs[:, 0]), ad.gather_rows(z, pairs[:, 1]))
    return d * d


def link_pred_loss(model: Model, decoder: FermiDirac, z: Tensor, pos_edges, neg_edges, penalties=()) -> Tensor:
    """Binary cross-entropy of Fermi-Dirac scores over positive and negative pairs."""
    pos_edges, neg_edges = np.asarray(pos_edges), np.asarray(neg_edges)
    if len(pos_edges) != len(neg_edges) or len(pos_edges) == 0:
        raise ConfigError("link prediction needs equal, nonzero positive and negative counts")
    lp = decoder.logit(_pair_d2(model, z, pos_edges))
    ln = decoder.logit(_pair_d2(model, z, neg_edges))
    # -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l)
    loss = ad.mean(ad.softplus(-1.0 * lp)) + ad.mean(ad.softplus(ln))
    for p in penalties:
        loss = loss + p
    return loss


def sample_non_edges(num_nodes: int, count: int, forbidden: set, rng: np.random.Generator) -> np.ndarray:
    """Uniform node pairs that are neither self-pairs nor in ``forbidden``."""
    out = []
    while len(out) < count:
        cand = rng.integers(0, num_nodes, size=(2 * (count - len(out)) + 8, 2))
        for u, v in cand:
            if u != v and (min(u, v), max(u, v)) not in forbidden:
                out.append((u, v))
                if len(out) == count:
                    break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------- loop


@dataclass
class _Task:
    graph: Graph
    evaluate: callable
    loss: callable
    metric: str


def _node_task(graph: Graph, model: Model, cfg: TrainConfig) -> _Task:
    if graph.labels is None or graph.train_mask is None:
        raise ConfigError("node classification needs labels and masks")

    def loss(z, penalties, rng):
        return node_class_loss(model.classify(z), graph.labels, graph.train_mask, penalties)

    def evaluate(z):
        pred = np.argmax(model.classify(z).data, axis=1)
        return {
            split: accuracy(pred, graph.labels, getattr(graph, f"{split}_mask"))
            for split in ("train", "val", "test")
            if getattr(graph, f"{split}_mask").any()
        }

    return _Task(graph, evaluate, loss, "accuracy")


def _link_task(graph: Graph, model: Model, decoder: FermiDirac, cfg: TrainConfig) -> _Task:
    splits = graph.edge_splits
    if not splits or len(splits["train"]) == 0:
        raise ConfigError("link prediction needs edge splits with training edges")
    forbidden = {(min(u, v), max(u, v)) for u, v in graph.edges()}
    eval_rng = np.random.default_rng([cfg.seed, 2])
    eval_pairs = {}
    for split in ("train", "val", "test"):
        pos = splits[split]
        if len(pos):
            eval_pairs[split] = (pos, sample_non_edges(graph.num_nodes, len(pos), forbidden, eval_rng))
    train_pos = splits["train"]

    def loss(z, penalties, rng):
        neg = sample_non_edges(graph.num_nodes, len(train_pos), forbidden, rng)
        return link_pred_loss(model, decoder, z, train_pos, neg, penalties)

    def evaluate(z):
        out = {}
        for split, (pos, neg) in eval_pairs.items():
            scores = np.concatenate([
                decoder.score(_pair_d2(model, z, pos)).data,
                decoder.score(_pair_d2(model, z, neg)).data,
            ])
            truth = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
            out[split] = roc_auc(scores, truth)
        return out

    return _Task(graph.with_edges(train_pos), evaluate, loss, "roc_auc")


def scale_features(features: np.ndarray, target: float | None) -> np.ndarray:
    """Uniformly rescale so the largest row norm equals ``target`` (None: unchanged)."""
    if target is None:
        return features
    peak = np.linalg.norm(features, axis=1).max()
    return features if peak == 0 else features * (target / peak)


def _finite(x: float) -> float:
    return x if math.isfinite(x) else float("nan")


def train_loop(graph: Graph, config: TrainConfig, command: str = "train") -> RunReport:
    """Train ``config.model`` on ``graph``; see ``train_session``."""
    return train_session(graph, config, command)[0]


def train_session(graph: Graph, config: TrainConfig, command: str = "train"):
    """Full-batch training with early stopping on the validation metric.

    The returned report holds per-split metrics at the best validation epoch,
    the loss curve and per-epoch wall times.  A numerical failure stops
    training and flags the report as diverged.
    """
    t_start = time.perf_counter()
    cfg = config.cfg
    rng = np.random.default_rng(config.seed)
    num_classes = graph.num_classes if config.task == "node-class" else 0
    model = build_model(
        config.model, graph.features.shape[1], config.hidden, config.layers, num_classes, rng, cfg,
        self_loops=config.self_loops, init_scale=config.init_scale, reg_mode=config.reg_mode,
        phi=config.activation,
    )
    decoder = FermiDirac() if config.task == "link-pred" else None
    task = _node_task(graph, model, config) if decoder is None else _link_task(graph, model, decoder, config)
    params = model.parameters() + (decoder.parameters() if decoder else [])
    manifold = model.manifold_mask() + [False] * (len(params) - len(model.parameters()))
    for p in params:
        p.requires_grad = True
    state = OptState.zeros(params)
    sample_rng = np.random.default_rng([config.seed, 1])
    x = Tensor(scale_features(graph.features, config.feature_scale))

    report = RunReport(command=command, config=_config_echo(config), seed=config.seed)
    losses, penalties_curve, epoch_times = [], [], []
    best_val, best_epoch, best_snap, best_metrics = -math.inf, 0, None, {}
    caught: list[warnings.WarningMessage] = []
    epoch = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            for epoch in range(1, config.epochs + 1):
                t0 = time.perf_counter()
                with Tape() as tape:
                    z, penalties = model.encode(task.graph, x)
                    loss = task.loss(z, penalties, sample_rng)
                    if not math.isfinite(loss.item()):
                        raise NumericalError(f"non-finite loss at epoch {epoch}")
                    backward(tape, loss)
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                if config.optimizer == "adam":
                    adam_step(params, grads, state, config.learning_rate)
                else:
                    radam_lite_step(params, grads, state, config.learning_rate, cfg.c, manifold, cfg.n)
                for p in params:
                    p.grad = None
                losses.append(loss.item())
                penalties_curve.append(float(sum(p.item() for p in penalties)))
                with ad.no_grad():
                    z, _ = model.encode(task.graph, x)
                    scores = task.evaluate(z)
                val = scores.get("val", scores.get("train"))
                if not math.isfinite(val):
                    raise NumericalError(f"non-finite validation metric at epoch {epoch}")
                if val > best_val:
                    best_val, best_epoch, best_metrics = val, epoch, scores
                    best_snap = [p.data.copy() for p in params]
                epoch_times.append(time.perf_counter() - t0)
                if epoch - best_epoch >= config.patience:
                    break
                if config.time_limit is not None and time.perf_counter() - t_start > config.time_limit:
                    report.warnings.append(f"time limit reached after {epoch} epochs")
                    break
        except (NumericalError, FloatingPointError, HypTaylorError) as exc:
            report.diverged = True
            report.warnings.append(f"{type(exc).__name__}: {exc}")
    report.warnings += [f"{w.category.__name__}: {w.message}" for w in caught]
    # dedupe while keeping order
    report.warnings = list(dict.fromkeys(report.warnings))
    if best_snap is not None:
        for p, d in zip(params, best_snap):
            p.data = d
    for split in ("train", "val", "test"):
        report.metrics[f"{split}_{task.metric}"] = _finite(best_metrics.get(split, float("nan")))
    report.metrics["best_epoch"] = best_epoch
    report.metrics["epochs_run"] = epoch
    report.metrics["final_loss"] = _finite(losses[-1]) if losses else float("nan")
    report.metrics["final_penalty"] = penalties_curve[-1] if penalties_curve else 0.0
    report.series = {"loss": losses, "penalty": penalties_curve, "epoch_seconds": epoch_times}
    report.timings = {
        "total_seconds": time.perf_counter() - t_start,
        "mean_epoch_seconds": float(np.mean(epoch_times)) if epoch_times else 0.0,
    }
    return report, model, decoder


def _config_echo(config: TrainConfig) -> dict:
    out = config.to_dict()
    out["cfg"] = asdict(config.cfg)
    return out


def tree_graph(depth: int = 5, branching: int = 3, feature_dim: int = 16, seed: int = 0, noise: float = 0.1) -> Graph:
    return gen_tree(depth, branching, feature_dim, seed, noise)
