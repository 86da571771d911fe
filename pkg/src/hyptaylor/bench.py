"""Latency microbenchmarks for kernels and layer primitives.

Every case preallocates its inputs and output buffers, so the timed region
contains only arithmetic.  Each repetition times a calibrated batch of calls
with ``time.perf_counter_ns`` and reports nanoseconds per call.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .core import artanh_coefficients, horner, tanh_coefficients
from .errors import ConfigError

OPS = ("tanh-kernel", "artanh-kernel", "matvec", "linear", "dist1")
VARIANTS = ("euclidean", "exact-hyperbolic", "ptse")
COLUMNS = ("op", "variant", "dim", "n", "median_ns", "p10_ns", "p90_ns")
TARGET_BATCH_NS = 200_000


@dataclass
class BenchRow:
    op: str
    variant: str
    dim: int
    n: int
    median_ns: float
    p10_ns: float
    p90_ns: float

    def as_list(self):
        return [self.op, self.variant, self.dim, self.n, f"{self.median_ns:.1f}", f"{self.p10_ns:.1f}", f"{self.p90_ns:.1f}"]


def _poly_scalar(coeffs, t: float) -> float:
    acc = coeffs[-1]
    for a in reversed(coeffs[:-1]):
        acc = acc * t + a
    return acc


def make_inputs(op: str, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    """Random operands for ``op``; shared by every variant and ``n`` of one group."""
    if op in ("tanh-kernel", "artanh-kernel"):
        return (rng.uniform(-0.5, 0.5, dim),)
    if op not in OPS:
        raise ConfigError(f"unknown benchmark op {op!r}")
    M = rng.uniform(-1, 1, (dim, dim)) / np.sqrt(dim)
    v = rng.uniform(-1, 1, dim)
    v *= 0.3 / np.linalg.norm(v)
    if op == "matvec":
        return M, v
    if op == "linear":
        b = rng.uniform(-1, 1, dim)
        b *= 0.2 / np.linalg.norm(b)
        return M, v, b
    y = rng.uniform(-1, 1, dim)
    y *= 0.25 / np.linalg.norm(y)
    return v, y


def make_case(op: str, variant: str, n: int, inputs: tuple[np.ndarray, ...]):
    """Return ``(fn, result)``: ``fn()`` evaluates once, writing into ``result``."""
    if op in ("tanh-kernel", "artanh-kernel"):
        (x,) = inputs
        dim = x.shape[0]
        out = np.empty(dim)
        t = np.empty(dim)
        coeffs = tanh_coefficients(n) if op == "tanh-kernel" else artanh_coefficients(n)
        if variant == "euclidean":
            return (lambda: np.copyto(out, x)), out
        if variant == "exact-hyperbolic":
            f = np.tanh if op == "tanh-kernel" else np.arctanh
            return (lambda: f(x, out=out)), out

        def ptse():
            np.multiply(x, x, out=t)
            horner(coeffs, t, out=out)
            np.multiply(out, x, out=out)

        return ptse, out

    dim = inputs[0].shape[0]
    out = np.empty(dim)
    tanh_c, artanh_c = tanh_coefficients(n), artanh_coefficients(n)

    if op == "matvec":
        M, v = inputs
        if variant == "euclidean":
            return (lambda: np.matmul(M, v, out=out)), out
        if variant == "exact-hyperbolic":

            def exact():
                np.matmul(M, v, out=out)
                nv = np.sqrt(v @ v)
                nm = np.sqrt(out @ out)
                np.multiply(out, np.tanh(nm / nv * np.arctanh(nv)) / nm, out=out)

            return exact, out

        def ptse():
            np.matmul(M, v, out=out)
            np.multiply(out, _matvec_k(v @ v, tanh_c, artanh_c), out=out)

        return ptse, out

    if op == "linear":
        M, v, b = inputs
        if variant == "euclidean":

            def euclid():
                np.matmul(M, v, out=out)
                np.add(out, b, out=out)

            return euclid, out
        tmp = np.empty(dim)
        if variant == "exact-hyperbolic":

            def exact():
                np.matmul(M, v, out=tmp)
                nv = np.sqrt(v @ v)
                nm = np.sqrt(tmp @ tmp)
                np.multiply(tmp, np.tanh(nm / nv * np.arctanh(nv)) / nm, out=tmp)
                _mobius_into(tmp, b, out)

            return exact, out

        def ptse():
            np.matmul(M, v, out=tmp)
            np.multiply(tmp, _matvec_k(v @ v, tanh_c, artanh_c), out=tmp)
            _mobius_into(tmp, b, out)

        return ptse, out

    if op == "dist1":
        v, y = inputs
        neg = -v
        res = np.empty(1)
        if variant == "euclidean":

            def euclid():
                np.subtract(v, y, out=out)
                res[0] = np.sqrt(out @ out)

            return euclid, res
        if variant == "exact-hyperbolic":

            def exact():
                _mobius_into(neg, y, out)
                res[0] = 2.0 * np.arctanh(np.sqrt(out @ out))

            return exact, res

        def ptse():
            _mobius_into(neg, y, out)
            s2 = out @ out
            res[0] = 2.0 * np.sqrt(s2) * _poly_scalar(artanh_c, s2)

        return ptse, res
    raise ConfigError(f"unknown benchmark op {op!r}")


def _matvec_k(vv: float, tanh_c, artanh_c) -> float:
    """Series matvec scale for c = 1 from |v|^2."""
    a = _poly_scalar(artanh_c, vv)
    return a * _poly_scalar(tanh_c, a * a)


def _mobius_into(x: np.ndarray, y: np.ndarray, out: np.ndarray):
    xy, xx, yy = x @ y, x @ x, y @ y
    den = 1.0 + 2 * xy + xx * yy
    np.multiply(x, (1.0 + 2 * xy + yy) / den, out=out)
    out += ((1.0 - xx) / den) * y


def _calibrate(fn) -> int:
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= TARGET_BATCH_NS or inner >= 1 << 16:
            return inner
        inner *= 2


def _time_batch(fn, inner: int) -> float:
    t0 = time.perf_counter_ns()
    for _ in range(inner):
        fn()
    return (time.perf_counter_ns() - t0) / inner


def time_cases(fns, reps: int, warmup: int) -> list[tuple[float, float, float]]:
    """Time several callables with interleaved repetitions.

    Round-robin sampling spreads slow drift of the host (frequency scaling,
    background load) evenly over all cases instead of biasing whichever ran last.
    Returns (median, p10, p90) nanoseconds per call for each callable.
    """
    for fn in fns:
        for _ in range(warmup):
            fn()
    inners = [_calibrate(fn) for fn in fns]
    samples = np.empty((len(fns), reps))
    for r in range(reps):
        for k, (fn, inner) in enumerate(zip(fns, inners)):
            samples[k, r] = _time_batch(fn, inner)
    p10, med, p90 = np.percentile(samples, [10, 50, 90], axis=1)
    return [(float(m), float(a), float(b)) for m, a, b in zip(med, p10, p90)]


def time_case(fn, reps: int, warmup: int) -> tuple[float, float, float]:
    return time_cases([fn], reps, warmup)[0]


def run_bench(ops, dims, n_list, reps: int = 30, warmup: int = 5, seed: int = 0) -> list[BenchRow]:
    if reps < 10:
        raise ConfigError("reps must be >= 10")
    if warmup < 3:
        raise ConfigError("warmup must be >= 3")
    for op in ops:
        if op not in OPS:
            raise ConfigError(f"unknown benchmark op {op!r}; expected one of {OPS}")
    rows = []
    for op in ops:
        for dim in dims:
            inputs = make_inputs(op, int(dim), np.random.default_rng(seed))
            keys = [(int(n), variant) for n in n_list for variant in VARIANTS]
            fns = [make_case(op, v, n, inputs)[0] for n, v in keys]
            for (n, variant), stats in zip(keys, time_cases(fns, reps, warmup)):
                rows.append(BenchRow(op, variant, int(dim), n, *stats))
    return rows


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()

