"""Graph encoders used by the training loop.

``tgcn`` and ``tgat`` stack series graph convolutions (uniform and learned
neighbour weights).  ``euclidean-gcn`` and ``exact-hgcn`` are baselines: the
latter uses closed-form tanh/artanh maps with norm projection back into the
ball, the classic formulation the series layers avoid.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import PtseConfig
from .errors import ConfigError
from .graph import Graph
from .gyro import dist1_ptse, mobius_add
from .layers import ACTIVATIONS, AttnParams, LinearParams, graph_conv_forward, regularize

MODELS = ("tgcn", "tgat", "euclidean-gcn", "exact-hgcn")
PROJ_EPS = 1e-5
MIN_NORM = 1e-15


class Model:
    """Encoder plus an optional Euclidean classification head."""

    def __init__(self, dims: list[int], num_classes: int, rng: np.random.Generator, cfg: PtseConfig,
                 init_scale: float, self_loops: str):
        self.cfg = cfg
        self.self_loops = self_loops
        self.layers = [LinearParams.init(rng, d_out, d_in, scale=init_scale) for d_in, d_out in zip(dims, dims[1:])]
        self.head = (
            LinearParams.init(rng, num_classes, dims[-1], fused=False, scale=1.0) if num_classes else None
        )

    def encoder_parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer.parameters()]

    def parameters(self) -> list[Tensor]:
        return self.encoder_parameters() + (self.head.parameters() if self.head else [])

    def manifold_mask(self) -> list[bool]:
        """Parameters whose updates go through the exponential map (layer biases)."""
        mask = []
        for layer in self.layers:
            mask += [False, True]
        return mask + [False] * (len(self.parameters()) - len(mask))

    def encode(self, graph: Graph, x) -> tuple[Tensor, list[Tensor]]:
        raise NotImplementedError

    def classify(self, z: Tensor) -> Tensor:
        return ad.matmul(z, ad.transpose(self.head.w)) + self.head.b

    def distance(self, u: Tensor, v: Tensor) -> Tensor:
        raise NotImplementedError

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, snap: list[np.ndarray]):
        for p, d in zip(self.parameters(), snap):
            p.data = d.copy()


class PtseGCN(Model):
    def __init__(self, dims, num_classes, rng, cfg, init_scale=0.1, self_loops="isolated",
                 attention=False, reg_mode="loss-penalty", phi="sigmoid"):
        super().__init__(dims, num_classes, rng, cfg, init_scale, self_loops)
        self.reg_mode = reg_mode
        self.phi = phi
        self.attn = [AttnParams.init(rng, d, scale=1.0) if attention else None for d in dims[1:]]

    def encoder_parameters(self):
        out = []
        for layer, attn in zip(self.layers, self.attn):
            out += layer.parameters() + (attn.parameters() if attn else [])
        return out

    def manifold_mask(self):
        mask = []
        for layer, attn in zip(self.layers, self.attn):
            mask += [False, True] + ([False] * len(attn.parameters()) if attn else [])
        return mask + [False] * (len(self.parameters()) - len(mask))

    def encode(self, graph, x):
        h = ad.as_tensor(x)
        penalties = []
        for layer, attn in zip(self.layers, self.attn):
            out, _, pre = graph_conv_forward(
                layer.w, layer.b, h, graph, attn, self.cfg, phi=self.phi, fused=layer.fused,
                self_loops=self.self_loops,
            )
            h, penalty = regularize(out, pre, self.cfg, self.reg_mode)
            penalties.append(penalty)
        return h, penalties

    def distance(self, u, v):
        return dist1_ptse(u, v, self.cfg)


def _mean_aggregate(h: Tensor, graph: Graph, self_loops: str) -> Tensor:
    dst, src = graph.edge_index(self_loops)
    deg = np.bincount(dst, minlength=graph.num_nodes).astype(np.float64)
    return ad.segment_sum(ad.gather_rows(h, src), dst, graph.num_nodes) * Tensor(1.0 / deg[:, None])


class EuclideanGCN(Model):
    def encode(self, graph, x):
        h = ad.as_tensor(x)
        for k, layer in enumerate(self.layers):
            h = _mean_aggregate(ad.matmul(h, ad.transpose(layer.w)) + layer.b, graph, self.self_loops)
            if k < len(self.layers) - 1:
                h = ad.relu(h)
        return h, []

    def manifold_mask(self):
        return [False] * len(self.parameters())

    def distance(self, u, v):
        d = u - v
        return ad.sqrt(ad.sum(d * d, axis=-1) + 1e-12)


# ------------------------------------------------------------ closed-form baseline


def _artanh(z: Tensor) -> Tensor:
    return 0.5 * ad.log((1.0 + z) / (1.0 - z))


def _norm(x: Tensor) -> Tensor:
    return ad.maximum(ad.norm2(x, axis=-1, keepdims=True), MIN_NORM)


def _exp0(v: Tensor, c: float) -> Tensor:
    sc = math.sqrt(c)
    n = _norm(v)
    return ad.tanh_builtin(sc * n) * v / (sc * n)


def _log0(y: Tensor, c: float) -> Tensor:
    sc = math.sqrt(c)
    n = _norm(y)
    return _artanh(sc * n) * y / (sc * n)


def _project(x: Tensor, c: float) -> Tensor:
    """Pull points back inside the ball of radius (1 - eps)/sqrt(c)."""
    limit = (1.0 - PROJ_EPS) / math.sqrt(c)
    return x / ad.maximum(_norm(x) / limit, 1.0)


class ExactHGCN(Model):
    def __init__(self, dims, num_classes, rng, cfg, init_scale=1.0, self_loops="isolated", phi="sigmoid"):
        super().__init__(dims, num_classes, rng, cfg, init_scale, self_loops)
        self.phi = phi

    def encode(self, graph, x):
        c = self.cfg.c
        h = _project(_exp0(ad.as_tensor(x), c), c)
        for k, layer in enumerate(self.layers):
            # Mobius matvec, then bias, each projected
            xn = _norm(h)
            mx = ad.matmul(h, ad.transpose(layer.w))
            mxn = _norm(mx)
            sc = math.sqrt(c)
            h = ad.tanh_builtin(mxn / xn * _artanh(sc * xn)) * mx / (sc * mxn)
            h = _project(mobius_add(_project(h, c), _exp0(layer.b, c), c), c)
            # aggregate in the tangent space at the origin, then activate
            t = _mean_aggregate(_log0(h, c), graph, self.self_loops)
            h = _project(_exp0(t, c), c)
            h = _project(_exp0(ACTIVATIONS[self.phi](_log0(h, c)), c), c)
        return h, []

    def classify(self, z):
        return super().classify(_log0(z, self.cfg.c))

    def manifold_mask(self):
        return [False] * len(self.parameters())

    def distance(self, u, v):
        sc = math.sqrt(self.cfg.c)
        d = mobius_add(-1.0 * u, v, self.cfg.c)
        return ad.reshape(2.0 / sc * _artanh(sc * _norm(d)), u.shape[:-1])


def build_model(name: str, in_dim: int, hidden: int, num_layers: int, num_classes: int,
                rng: np.random.Generator, cfg: PtseConfig, self_loops: str = "isolated",
                init_scale: float = 0.1, reg_mode: str = "loss-penalty", phi: str = "sigmoid") -> Model:
    if num_layers < 1 or hidden < 1:
        raise ConfigError("need at least one layer of positive width")
    dims = [in_dim] + [hidden] * num_layers
    if name in ("tgcn", "tgat"):
        return PtseGCN(dims, num_classes, rng, cfg, init_scale, self_loops, attention=name == "tgat",
                       reg_mode=reg_mode, phi=phi)
    if name == "euclidean-gcn":
        return EuclideanGCN(dims, num_classes, rng, cfg, 1.0, self_loops)
    if name == "exact-hgcn":
        return ExactHGCN(dims, num_classes, rng, cfg, 1.0, self_loops, phi)
    raise ConfigError(f"unknown model {name!r}; expected one of {MODELS}")
