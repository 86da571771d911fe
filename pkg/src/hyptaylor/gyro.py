"""Poincare-ball gyrovector operations: closed-form oracles and their
series (PTSE) reformulations.

All functions act on the last axis, so a batch of vectors is an ``(N, d)``
array.  They accept numpy arrays or ``Tensor`` objects; if any argument is a
``Tensor`` the result is a ``Tensor`` (and is differentiable), otherwise a
plain ``ndarray`` is returned.

The conformal factor is taken as ``1 / (1 - c|x|^2)`` so that the series
exponential and logarithmic maps at the origin coincide term by term with the
standard ``exp_0`` / ``log_0``.
"""
from __future__ import annotations

import functools
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import PtseConfig, arcosh_coefficients, artanh_coefficients, tanh_coefficients
from .errors import DomainError, NearSingular, ShapeError

SINGULAR_TOL = 1e-12


def _lifted(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        wrap = any(
            isinstance(a, Tensor) or (isinstance(a, (list, tuple)) and any(isinstance(t, Tensor) for t in a))
            for a in args
        )
        out = fn(*args, **kwargs)
        if wrap or not isinstance(out, Tensor):
            return out
        return out.data
    return wrapper


def _t(x) -> Tensor:
    return ad.as_tensor(x)


def sqnorm(x) -> Tensor:
    x = _t(x)
    return ad.sum(x * x, axis=-1, keepdims=True)


def dot(x, y) -> Tensor:
    return ad.sum(_t(x) * _t(y), axis=-1, keepdims=True)


def _squeeze(x: Tensor) -> Tensor:
    return ad.reshape(x, x.shape[:-1])


def _check_dims(x: Tensor, y: Tensor, op: str):
    if x.shape[-1:] != y.shape[-1:]:
        raise ShapeError(f"{op}: dimension mismatch {x.shape} vs {y.shape}")


def tanh_scale(t, n: int) -> Tensor:
    """sum_i a_i t^(i-1) with a_i the tanh coefficients: tanh_ptse(s)/s at t = s^2."""
    return ad.polyval(tanh_coefficients(n), t)


def artanh_scale(t, n: int) -> Tensor:
    """sum_i t^(i-1)/(2i-1): artanh_ptse(s)/s at t = s^2."""
    return ad.polyval(artanh_coefficients(n), t)


def conformal_factor(x, c: float):
    """lambda_x = 1 / (1 - c|x|^2); equals 1 at the origin."""
    return _lifted(lambda v: 1.0 / (1.0 - c * sqnorm(v)))(x)


# ---------------------------------------------------------------- Mobius addition


def _mobius_parts(xy, xx, yy, c):
    num_x = 1.0 + 2 * c * xy + c * yy
    num_y = 1.0 - c * xx
    den = 1.0 + 2 * c * xy + (c * c) * xx * yy
    if np.any(np.abs(den.data) < SINGULAR_TOL):
        raise NearSingular("Mobius addition denominator vanishes")
    return num_x / den, num_y / den


@_lifted
def mobius_add(x, y, c: float = 1.0):
    """x (+) y; closed form with no transcendental functions."""
    x, y = _t(x), _t(y)
    _check_dims(x, y, "mobius_add")
    kx, ky = _mobius_parts(dot(x, y), sqnorm(x), sqnorm(y), c)
    return kx * x + ky * y


@_lifted
def fused_mobius_sum(vectors, scales, c: float = 1.0):
    """Left-folded Mobius sum ``(s_0 v_0) (+) (s_1 v_1) (+) ...``.

    Evaluated from the Gram matrix of the raw vectors: the partial sum is
    carried as a list of scalar weights and the output is formed once as
    ``sum_k K_k v_k``.  Scales are per-row scalars of shape ``(..., 1)`` or
    plain floats.
    """
    vs = [_t(v) for v in vectors]
    for v in vs[1:]:
        _check_dims(vs[0], v, "fused_mobius_sum")
    m = len(vs)
    gram = {}
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = dot(vs[i], vs[j])
    weights = [scales[0]]
    for k in range(1, m):
        sk = scales[k]
        acc_sq = 0.0
        acc_dot = 0.0
        for i, wi in enumerate(weights):
            acc_dot = acc_dot + wi * gram[i, k]
            for j, wj in enumerate(weights):
                acc_sq = acc_sq + wi * wj * gram[i, j]
        xy = sk * acc_dot
        yy = sk * sk * gram[k, k]
        kx, ky = _mobius_parts(_t(xy), _t(acc_sq), _t(yy), c)
        weights = [kx * wi for wi in weights] + [ky * sk]
    out = weights[0] * vs[0]
    for w, v in zip(weights[1:], vs[1:]):
        out = out + w * v
    return out


# ---------------------------------------------------------------- series maps


@_lifted
def exp_map_ptse(x, v, cfg: PtseConfig):
    """x (+) s v with s = sum_i a_i lambda_x^(2i-1) (sqrt(c)|v|)^(2i-2)."""
    x, v = _t(x), _t(v)
    _check_dims(x, v, "exp_map_ptse")
    lam = 1.0 / (1.0 - cfg.c * sqnorm(x))
    s = lam * tanh_scale(cfg.c * lam * lam * sqnorm(v), cfg.n)
    return mobius_add(x, s * v, cfg.c)


@_lifted
def log_map_ptse(x, y, cfg: PtseConfig):
    """sum_i lambda_x^(2i-1) (sqrt(c)|u|)^(2i-2)/(2i-1) u, with u = -x (+) y."""
    x, y = _t(x), _t(y)
    _check_dims(x, y, "log_map_ptse")
    u = mobius_add(-x, y, cfg.c)
    lam = 1.0 / (1.0 - cfg.c * sqnorm(x))
    return lam * artanh_scale(cfg.c * lam * lam * sqnorm(u), cfg.n) * u


def scalar_mul_coefficients(n: int) -> tuple[float, ...]:
    a = tanh_coefficients(n)
    return tuple(a[i] / (2 * i + 1) for i in range(n))


@_lifted
def scalar_mul_ptse(r: float, x, cfg: PtseConfig):
    """Series Mobius scalar product, fused into K_rx * (r x).

    Term i carries a_i (sqrt(c)|w|)^(2i-2) (sqrt(c)|x|)^(2i-2)/(2i-1) where
    w = inner * r x and inner is the artanh scale of |x|.
    """
    x = _t(x)
    c = cfg.c
    xx = sqnorm(x)
    inner = artanh_scale(c * xx, cfg.n)
    rx = float(r) * x if not isinstance(r, Tensor) else r * x
    ww = inner * inner * sqnorm(rx)
    k = ad.polyval(scalar_mul_coefficients(cfg.n), (c * c) * ww * xx)
    return k * rx


def matvec_scale(v, cfg: PtseConfig) -> Tensor:
    """K_Mv = tanh_ptse(a) with a = sum_j (sqrt(c)|v|)^(2j-2)/(2j-1); per row of v."""
    a = artanh_scale(cfg.c * sqnorm(v), cfg.n)
    return a * tanh_scale(a * a, cfg.n)


@_lifted
def matvec_ptse(M, v, cfg: PtseConfig):
    """K_Mv * (M v).  ``v`` may be a batch ``(N, p)``; rows map to ``(N, d)``."""
    M, v = _t(M), _t(v)
    if M.ndim != 2 or v.shape[-1] != M.shape[1]:
        raise ShapeError(f"matvec_ptse: cannot apply {M.shape} to {v.shape}")
    mv = ad.matmul(v, ad.transpose(M)) if v.ndim == 2 else ad.matmul(M, v)
    return matvec_scale(v, cfg) * mv


@_lifted
def parallel_transport_ptse(x, v, cfg: PtseConfig):
    """sum_i |m|^(2i-1)/(2i-1) m with m = x (+) tanh-scaled v."""
    x, v = _t(x), _t(v)
    _check_dims(x, v, "parallel_transport_ptse")
    m = mobius_add(x, tanh_scale(cfg.c * sqnorm(v), cfg.n) * v, cfg.c)
    mm = sqnorm(m)
    return ad.sqrt(mm) * artanh_scale(mm, cfg.n) * m


# ---------------------------------------------------------------- distances


@_lifted
def dist1_ptse(x, y, cfg: PtseConfig):
    """(2/sqrt(c)) artanh_ptse(sqrt(c)|-x (+) y|)."""
    x, y = _t(x), _t(y)
    _check_dims(x, y, "dist1_ptse")
    u = mobius_add(-x, y, cfg.c)
    s = cfg.sqrt_c * ad.norm2(u, axis=-1, keepdims=True)
    d = (2.0 / cfg.sqrt_c) * s * artanh_scale(s * s, cfg.n)
    return _squeeze(d)


def _dist2_argument(x: Tensor, y: Tensor) -> Tensor:
    _check_dims(x, y, "dist2")
    xx, yy = sqnorm(x), sqnorm(y)
    if np.any(xx.data >= 1) or np.any(yy.data >= 1):
        raise DomainError("dist2 needs |x| < 1 and |y| < 1")
    diff = x - y
    return 1.0 + 2.0 * sqnorm(diff) / ((1.0 - xx) * (1.0 - yy))


def arcosh_series(z, n: int) -> Tensor:
    """Differentiable form of ``core.arcosh_ptse``."""
    log_part, tail = arcosh_coefficients(n)
    z = _t(z)
    if np.any(z.data < 1):
        raise DomainError("arcosh series requires x >= 1")
    s = 2.0 * z - 1.0
    r = ad.power(z, -2)
    return s * ad.polyval(log_part, s) - r * ad.polyval(tail, r)


@_lifted
def dist2_ptse(x, y, cfg: PtseConfig):
    """Series arcosh of 1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2))."""
    return _squeeze(arcosh_series(_dist2_argument(_t(x), _t(y)), cfg.n))


def dist2_exact(x, y, c: float = 1.0):
    """Exact counterpart of ``dist2_ptse``.  The formula carries no curvature,
    so ``c`` is accepted for signature symmetry only."""
    arg = _dist2_argument(_t(x), _t(y)).data[..., 0]
    return np.arccosh(arg)


# ---------------------------------------------------------------- exact oracles


class PoincarePoint:
    """A vector strictly inside the ball of curvature ``c``."""

    __slots__ = ("v", "c")

    def __init__(self, v, c: float = 1.0):
        v = np.array(v, dtype=np.float64)
        if not c > 0:
            raise DomainError("curvature must be positive")
        if math.sqrt(c) * np.linalg.norm(v) >= 1:
            raise DomainError(f"point with norm {np.linalg.norm(v):.6g} lies outside the ball")
        self.v = v
        self.c = float(c)

    def __array__(self, dtype=None):
        return self.v if dtype is None else self.v.astype(dtype)

    def __repr__(self):
        return f"PoincarePoint({self.v.tolist()}, c={self.c})"


def _in_ball(x, c) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(math.sqrt(c) * np.linalg.norm(x, axis=-1) >= 1):
        raise DomainError("point lies outside the Poincare ball")
    return x


def _np_mobius(x, y, c):
    xy = np.sum(x * y, axis=-1, keepdims=True)
    xx = np.sum(x * x, axis=-1, keepdims=True)
    yy = np.sum(y * y, axis=-1, keepdims=True)
    den = 1 + 2 * c * xy + c * c * xx * yy
    return ((1 + 2 * c * xy + c * yy) * x + (1 - c * xx) * y) / den


def _ratio(f, s, v):
    # f(s)/s with the removable singularity at s = 0 filled in by 1
    safe = np.where(s > 0, s, 0.5)
    return np.where(s > 0, f(safe) / safe, 1.0) * v


def exp_map_exact(x, v, c: float = 1.0):
    """Standard exponential map with conformal factor 2/(1 - c|x|^2)."""
    x = _in_ball(x, c)
    v = np.asarray(v, dtype=np.float64)
    sc = math.sqrt(c)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    lam = 2.0 / (1.0 - c * np.sum(x * x, axis=-1, keepdims=True))
    step = _ratio(lambda s: np.tanh(lam * s / 2), sc * nv, v)
    return _np_mobius(x, step, c)


def log_map_exact(x, y, c: float = 1.0):
    x, y = _in_ball(x, c), _in_ball(y, c)
    sc = math.sqrt(c)
    u = _np_mobius(-x, y, c)
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    lam = 2.0 / (1.0 - c * np.sum(x * x, axis=-1, keepdims=True))
    return _ratio(lambda s: (2.0 / lam) * np.arctanh(s), sc * nu, u)


def scalar_mul_exact(r: float, x, c: float = 1.0):
    x = _in_ball(x, c)
    s = math.sqrt(c) * np.linalg.norm(x, axis=-1, keepdims=True)
    return _ratio(lambda t: np.tanh(r * np.arctanh(t)), s, x)


def matvec_exact(M, v, c: float = 1.0):
    """Standard Mobius matrix-vector product (zero when Mv = 0)."""
    v = _in_ball(v, c)
    M = np.asarray(M, dtype=np.float64)
    mv = v @ M.T if v.ndim == 2 else M @ v
    sc = math.sqrt(c)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    nmv = np.linalg.norm(mv, axis=-1, keepdims=True)
    ok = (nv > 0) & (nmv > 0)
    safe_v, safe_mv = np.where(ok, nv, 0.5), np.where(ok, nmv, 0.5)
    scale = np.tanh(safe_mv / safe_v * np.arctanh(sc * safe_v)) / (sc * safe_mv)
    return np.where(ok, scale, 0.0) * mv


def dist_exact(x, y, c: float = 1.0):
    """(2/sqrt(c)) artanh(sqrt(c) |-x (+) y|)."""
    x, y = _in_ball(x, c), _in_ball(y, c)
    sc = math.sqrt(c)
    u = _np_mobius(-x, y, c)
    return 2.0 / sc * np.arctanh(sc * np.linalg.norm(u, axis=-1))


def exp0_exact(v, c: float = 1.0):
    """tanh(sqrt(c)|v|) v / (sqrt(c)|v|)."""
    v = np.asarray(v, dtype=np.float64)
    s = math.sqrt(c) * np.linalg.norm(v, axis=-1, keepdims=True)
    return _ratio(np.tanh, s, v)


def log0_exact(y, c: float = 1.0):
    """artanh(sqrt(c)|y|) y / (sqrt(c)|y|)."""
    y = _in_ball(y, c)
    s = math.sqrt(c) * np.linalg.norm(y, axis=-1, keepdims=True)
    return _ratio(np.arctanh, s, y)
