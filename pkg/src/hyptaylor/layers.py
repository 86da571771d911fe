"""Series-scaled neural network layers.

Every layer is computed as a Euclidean operation (``Wx + b``, a weighted
neighbour sum, ...) multiplied by polynomial scale factors.  No layer maps to
the tangent space and back; each forward pass is a single scaled pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import PtseConfig
from .errors import ConfigError, DomainError, GraphError, NearSingular, ShapeError
from .graph import Graph
from .gyro import (
    artanh_scale,
    dist2_ptse,
    fused_mobius_sum,
    matvec_scale,
    mobius_add,
    sqnorm,
    tanh_scale,
)

ACTIVATIONS = {
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
    "tanh": ad.tanh_builtin,
}
REGULARIZE_MODES = ("loss-penalty", "literal")


def init_weight(rng: np.random.Generator, d: int, p: int, scale: float = 0.1) -> Tensor:
    """Uniform in +-1/sqrt(p), shrunk by ``scale`` to start in the small-norm regime."""
    bound = 1.0 / math.sqrt(p)
    return Tensor(scale * rng.uniform(-bound, bound, (d, p)), requires_grad=True)


@dataclass
class LinearParams:
    w: Tensor
    b: Tensor
    fused: bool = True

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"inconsistent linear shapes w{self.w.shape} b{self.b.shape}")

    @classmethod
    def init(cls, rng, d: int, p: int, fused: bool = True, scale: float = 0.1) -> "LinearParams":
        w = init_weight(rng, d, p, scale)
        b = init_weight(rng, 1, d, scale)
        return cls(w, Tensor(b.data[0], requires_grad=True), fused)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


@dataclass
class GruParams:
    Wr: Tensor
    Wz: Tensor
    W: Tensor
    Ur: Tensor
    Uz: Tensor
    U: Tensor
    br: Tensor
    bz: Tensor
    b: Tensor

    def __post_init__(self):
        d, p = self.U.shape
        for name in ("Wr", "Wz", "W"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {(d, d)}")
        for name in ("Ur", "Uz"):
            if getattr(self, name).shape != (d, p):
                raise ShapeError(f"{name} must be {(d, p)}")
        for name in ("br", "bz", "b"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"{name} must be {(d,)}")

    @classmethod
    def init(cls, rng, d: int, p: int, scale: float = 0.1) -> "GruParams":
        ws = {k: init_weight(rng, d, d, scale) for k in ("Wr", "Wz", "W")}
        us = {k: init_weight(rng, d, p, scale) for k in ("Ur", "Uz", "U")}
        bs = {k: Tensor(init_weight(rng, 1, d, scale).data[0], requires_grad=True) for k in ("br", "bz", "b")}
        return cls(**ws, **us, **bs)

    def parameters(self) -> list[Tensor]:
        return [self.Wr, self.Wz, self.W, self.Ur, self.Uz, self.U, self.br, self.bz, self.b]


@dataclass
class AttnParams:
    """Temperature ``beta`` and offset ``bias`` for distance-based matching, and
    the scoring layer (``mlp``, a ``2d -> 1`` linear map) for graph attention."""

    beta: float | Tensor = 1.0
    bias: float | Tensor = 0.0
    mlp: LinearParams | None = None

    def __post_init__(self):
        beta = self.beta.data if isinstance(self.beta, Tensor) else self.beta
        if not np.all(np.asarray(beta) > 0):
            raise ConfigError("attention temperature beta must be positive")

    @classmethod
    def init(cls, rng, d: int, scale: float = 0.1) -> "AttnParams":
        return cls(mlp=LinearParams.init(rng, 1, 2 * d, fused=False, scale=scale))

    def parameters(self) -> list[Tensor]:
        out = [t for t in (self.beta, self.bias) if isinstance(t, Tensor) and t.requires_grad]
        return out + (self.mlp.parameters() if self.mlp else [])


def _matvec(M, v) -> Tensor:
    v = ad.as_tensor(v)
    return ad.matmul(v, ad.transpose(M)) if v.ndim == 2 else ad.matmul(M, v)


# ---------------------------------------------------------------- activation


def activation_ptse(phi: str, x, cfg: PtseConfig, mode: str | None = None) -> Tensor:
    """Series-scaled Euclidean activation.

    ``literal``: u = artanh-scaled x; returns P(sigmoid(|u|)^2) * phi(u) with P
    the tanh scale polynomial.  ``map-compose``: origin log scaling, phi, then
    origin exp scaling.
    """
    if phi not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {phi!r}; expected one of {sorted(ACTIVATIONS)}")
    mode = mode or cfg.activation_mode
    f = ACTIVATIONS[phi]
    x = ad.as_tensor(x)
    u = artanh_scale(cfg.c * sqnorm(x), cfg.n) * x
    if mode == "literal":
        s = ad.sigmoid(ad.norm2(u, axis=-1, keepdims=True))
        return tanh_scale(s * s, cfg.n) * f(u)
    if mode == "map-compose":
        y = f(u)
        return tanh_scale(cfg.c * sqnorm(y), cfg.n) * y
    raise ConfigError(f"unknown activation mode {mode!r}")


# ---------------------------------------------------------------- linear


def linear_forward(params: LinearParams, x, cfg: PtseConfig) -> tuple[Tensor, Tensor]:
    """Returns ``(w (x) x (+) b, wx + b)``; the second value is the Euclidean
    pre-image used by the regularizer."""
    x = ad.as_tensor(x)
    if x.shape[-1] != params.w.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != {params.w.shape[1]}")
    wx = _matvec(params.w, x)
    k = matvec_scale(x, cfg)
    if params.fused:
        out = fused_mobius_sum([wx, params.b], [k, 1.0], cfg.c)
    else:
        out = mobius_add(k * wx, params.b, cfg.c)
    return out, wx + params.b


def linear_ptse(params: LinearParams, x, cfg: PtseConfig) -> Tensor:
    return linear_forward(params, x, cfg)[0]


# ---------------------------------------------------------------- GRU


def _gate_input(W, h, U, x, b, cfg: PtseConfig, simplified: bool) -> Tensor:
    wh, ux = _matvec(W, h), _matvec(U, x)
    kh, kx = matvec_scale(h, cfg), matvec_scale(x, cfg)
    if simplified:
        return fused_mobius_sum([wh, ux, b], [kh, kx, 1.0], cfg.c)
    return mobius_add(mobius_add(kh * wh, kx * ux, cfg.c), b, cfg.c)


def gru_cell_ptse(params: GruParams, h_prev, x_t, cfg: PtseConfig, simplified: bool = False) -> Tensor:
    """One step of the series GRU.  ``simplified`` evaluates every gate input
    as a single fused polynomial-scaled sum of the Euclidean products."""
    h = ad.as_tensor(h_prev)
    x = ad.as_tensor(x_t)
    if h.shape[-1] != params.W.shape[0] or x.shape[-1] != params.U.shape[1]:
        raise ShapeError("gru: state or input dimension mismatch")
    p = params
    r = activation_ptse("sigmoid", _gate_input(p.Wr, h, p.Ur, x, p.br, cfg, simplified), cfg)
    z = activation_ptse("sigmoid", _gate_input(p.Wz, h, p.Uz, x, p.bz, cfg, simplified), cfg)
    # (W diag(r)) h == W (r * h); the scale still depends on |h|
    wrh = _matvec(p.W, r * h)
    ux = _matvec(p.U, x)
    kh, kx = matvec_scale(h, cfg), matvec_scale(x, cfg)
    if simplified:
        pre = fused_mobius_sum([wrh, ux, p.b], [kh, kx, 1.0], cfg.c)
    else:
        pre = mobius_add(mobius_add(kh * wrh, kx * ux, cfg.c), p.b, cfg.c)
    h_tilde = activation_ptse("tanh", pre, cfg)
    delta = mobius_add(-h, h_tilde, cfg.c)
    return mobius_add(h, matvec_scale(delta, cfg) * (z * delta), cfg.c)


# ---------------------------------------------------------------- graph convolution


def graph_conv_forward(
    W,
    b,
    features,
    graph: Graph,
    attn: AttnParams | None,
    cfg: PtseConfig,
    phi: str = "sigmoid",
    fused: bool = True,
    self_loops: str = "isolated",
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(output, attention weights per edge, Euclidean pre-image)``.

    Edges are ``(dst, src)`` pairs, sorted by destination node, so every
    neighbourhood sum runs in node-index order.
    """
    x = ad.as_tensor(features)
    n_nodes = x.shape[0]
    if n_nodes != graph.num_nodes:
        raise GraphError(f"features have {n_nodes} rows for a graph of {graph.num_nodes} nodes")
    dst, src = graph.edge_index(self_loops)
    h, pre = linear_forward(LinearParams(W, b, fused), x, cfg)
    ell = artanh_scale(cfg.c * sqnorm(h), cfg.n) * h
    ell_src = ad.gather_rows(ell, src)
    if attn is not None and attn.mlp is not None:
        pair = ad.concat([ad.gather_rows(ell, dst), ell_src], axis=-1)
        logits = ad.leaky_relu(_matvec(attn.mlp.w, pair) + attn.mlp.b, 0.2)
        logits = ad.reshape(logits, (-1,))
    else:
        logits = Tensor(np.zeros(len(dst)))
    weights = ad.segment_softmax(logits, dst, n_nodes)
    m = ad.segment_sum(ad.reshape(weights, (-1, 1)) * ell_src, dst, n_nodes)
    norm_m = cfg.sqrt_c * ad.norm2(m, axis=-1, keepdims=True)
    y = norm_m * tanh_scale(norm_m * norm_m, cfg.n) * m
    return activation_ptse(phi, y, cfg), weights, pre


def graph_conv_ptse(W, b, features, graph: Graph, attn: AttnParams | None, cfg: PtseConfig, **kw) -> Tensor:
    """Feature transformation by the series linear layer, then attention-weighted
    aggregation of artanh-scaled neighbour features, then the series sigmoid."""
    return graph_conv_forward(W, b, features, graph, attn, cfg, **kw)[0]


# ---------------------------------------------------------------- attention


def attention_ptse(attn: AttnParams, q, keys, values, cfg: PtseConfig) -> Tensor:
    """Distance-matched attention with Lorentz-factor weighting of the values."""
    q, keys, values = ad.as_tensor(q), ad.as_tensor(keys), ad.as_tensor(values)
    if keys.shape != values.shape or keys.shape[-1] != q.shape[-1]:
        raise ShapeError("attention: query, keys and values must share the feature dim")
    vv = sqnorm(values)
    if np.any(vv.data >= 1):
        raise DomainError("attention values must have norm < 1")
    d2 = ad.reshape(dist2_ptse(q, keys, cfg), (-1, 1))
    alpha = activation_ptse("sigmoid", -1.0 * attn.beta * d2 - attn.bias, cfg)
    gamma = 1.0 / ad.sqrt(1.0 - vv)
    ag = alpha * gamma
    total = ad.sum(ag)
    if abs(total.item()) < 1e-300:
        raise NearSingular("attention normalizer vanished")
    return ad.sum((ag / total) * values, axis=0)


def attention_weights(attn: AttnParams, q, keys, values, cfg: PtseConfig) -> np.ndarray:
    """Normalized ``alpha * gamma`` weights, for inspection."""
    with ad.no_grad():
        q, keys, values = ad.as_tensor(q), ad.as_tensor(keys), ad.as_tensor(values)
        d2 = ad.reshape(dist2_ptse(q, keys, cfg), (-1, 1))
        alpha = activation_ptse("sigmoid", -1.0 * attn.beta * d2 - attn.bias, cfg)
        ag = alpha * (1.0 / ad.sqrt(1.0 - sqnorm(values)))
        return (ag.data / ag.data.sum())[:, 0]


# ---------------------------------------------------------------- regularizer


def l1_size(f) -> Tensor:
    """L1 norm of a vector, or the mean row L1 norm of a batch."""
    f = ad.as_tensor(f)
    absf = ad.absolute(f)
    if f.ndim <= 1:
        return ad.sum(absf)
    return ad.mean(ad.sum(absf, axis=-1))


def regularize(layer_output, pre_scale_value, cfg: PtseConfig, mode: str = "loss-penalty") -> tuple[Tensor, Tensor]:
    """Value regularizer lambda * |f(x)|_1 on the Euclidean pre-image f(x).

    ``loss-penalty`` leaves the output untouched and returns the penalty for the
    training loss; ``literal`` adds lambda * |f(x)|_1 to every output component
    (per row for batches) and also returns it.
    """
    out = ad.as_tensor(layer_output)
    f = ad.as_tensor(pre_scale_value)
    if mode not in REGULARIZE_MODES:
        raise ConfigError(f"unknown regularize mode {mode!r}")
    if cfg.lam == 0:
        return out, Tensor(0.0)
    penalty = cfg.lam * l1_size(f)
    if mode == "literal":
        absf = ad.absolute(f)
        row = ad.sum(absf, axis=-1, keepdims=f.ndim > 1)
        out = out + cfg.lam * row
    return out, penalty
