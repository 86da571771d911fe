import math

import numpy as np
import pytest

from hyptaylor import layers as L
from hyptaylor.autodiff import Tape, Tensor
from hyptaylor.core import PtseConfig
from hyptaylor.errors import ConfigError, DomainError, GraphError, NearSingular, ShapeError
from hyptaylor.graph import Graph
from layer_cases import LAYER_CASES, layer_grad_error

TANH_C = [1.0, -1 / 3, 2 / 15, -17 / 315, 62 / 2835]


def _norm(v):
    return math.sqrt(sum(t * t for t in v))


def _sig(t):
    return 1.0 / (1.0 + math.exp(-t))


def _log_scaled(v, n, c=1.0):
    r = math.sqrt(c) * _norm(v)
    k = sum(r ** (2 * i - 2) / (2 * i - 1) for i in range(1, n + 1))
    return [k * t for t in v]


def _sigma_diamond(v, n):
    """Term-by-term literal activation with the logistic sigmoid."""
    u = _log_scaled(v, n)
    s = _sig(_norm(u))
    scale = sum(TANH_C[i - 1] * s ** (2 * i - 2) for i in range(1, n + 1))
    return [scale * _sig(t) for t in u]


def _linear_params(w, b, fused=True):
    return L.LinearParams(Tensor(w), Tensor(b), fused)


# ---------------------------------------------------------------- activation


@pytest.mark.parametrize("mode", ["literal", "map-compose"])
def test_relu_kills_negative_input(mode):
    out = L.activation_ptse("relu", np.array([-0.2, -0.5]), PtseConfig(n=3), mode=mode)
    np.testing.assert_array_equal(out.data, [0.0, 0.0])


def test_relu_first_order_is_identity():
    out = L.activation_ptse("relu", np.array([0.2, 0.0]), PtseConfig(n=1))
    np.testing.assert_array_equal(out.data, [0.2, 0.0])


def test_sigmoid_literal_matches_term_oracle():
    x = [0.3, 0.1]
    out = L.activation_ptse("sigmoid", np.array(x), PtseConfig(n=3))
    np.testing.assert_allclose(out.data, _sigma_diamond(x, 3), rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.data, [0.5208500, 0.4746608], atol=5e-8)


def test_map_compose_matches_origin_maps():
    x = np.array([0.3, -0.2, 0.1])
    cfg = PtseConfig(n=3, activation_mode="map-compose")
    u = np.array(_log_scaled(list(x), 3))
    y = np.tanh(u)
    r2 = float(y @ y)
    expected = (1 + TANH_C[1] * r2 + TANH_C[2] * r2 * r2) * y
    np.testing.assert_allclose(L.activation_ptse("tanh", x, cfg).data, expected, atol=1e-15)


def test_unknown_activation():
    with pytest.raises(ConfigError):
        L.activation_ptse("gelu", np.ones(2), PtseConfig())
    with pytest.raises(ConfigError):
        L.activation_ptse("relu", np.ones(2), PtseConfig(), mode="other")


# ---------------------------------------------------------------- linear


@pytest.mark.parametrize("fused", [True, False])
def test_linear_identity_at_first_order(fused):
    x = np.array([0.3, -0.7, 0.2])
    out = L.linear_ptse(_linear_params(np.eye(3), np.zeros(3), fused), x, PtseConfig(n=1))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("fused", [True, False])
def test_linear_null_space_gives_zero(fused):
    w = np.array([[1.0, -1.0], [2.0, -2.0]])
    out = L.linear_ptse(_linear_params(w, np.zeros(2), fused), np.array([0.4, 0.4]), PtseConfig(n=3))
    np.testing.assert_array_equal(out.data, [0.0, 0.0])


@pytest.mark.parametrize("fused", [True, False])
def test_linear_first_order_without_bias_is_euclidean(fused):
    rng = np.random.default_rng(2)
    w, x = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    out = L.linear_ptse(_linear_params(w, np.zeros(4), fused), x, PtseConfig(n=1))
    np.testing.assert_array_equal(out.data, x @ w.T)


def _small(rng, shape, bound):
    v = rng.normal(size=shape)
    return v * (rng.uniform(0, bound) / np.linalg.norm(v))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_fusion_equivalence(n):
    rng = np.random.default_rng(n)
    cfg = PtseConfig(n=n)
    worst = 0.0
    for _ in range(100):
        d, p = rng.integers(1, 6, size=2)
        x = _small(rng, p, 1.0)
        w = rng.normal(size=(d, p))
        w *= rng.uniform(0, 0.3) / max(np.linalg.norm(w @ x), 1e-12)
        b = _small(rng, d, 0.3)
        fused = L.linear_ptse(_linear_params(w, b, True), x, cfg).data
        composed = L.linear_ptse(_linear_params(w, b, False), x, cfg).data
        worst = max(worst, np.max(np.abs(fused - composed)))
    assert worst < 1e-9


def test_linear_shape_errors():
    with pytest.raises(ShapeError):
        L.LinearParams(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(ShapeError):
        L.linear_ptse(_linear_params(np.ones((2, 3)), np.ones(2)), np.ones(4), PtseConfig())


# ---------------------------------------------------------------- GRU


def _gru(rng, d, p, bound=0.2):
    shapes = dict(Wr=(d, d), Wz=(d, d), W=(d, d), Ur=(d, p), Uz=(d, p), U=(d, p), br=(d,), bz=(d,), b=(d,))
    return L.GruParams(**{k: Tensor(rng.uniform(-bound, bound, s)) for k, s in shapes.items()})


def test_gru_zero_everything():
    z = Tensor(np.zeros((3, 3)))
    zp = Tensor(np.zeros((3, 2)))
    zb = Tensor(np.zeros(3))
    params = L.GruParams(z, z, z, zp, zp, zp, zb, zb, zb)
    out = L.gru_cell_ptse(params, np.zeros(3), np.zeros(2), PtseConfig(n=3))
    np.testing.assert_array_equal(out.data, np.zeros(3))


@pytest.mark.parametrize("simplified", [False, True])
def test_gru_closed_update_gate_keeps_state(simplified):
    rng = np.random.default_rng(4)
    params = _gru(rng, 3, 2)
    params.bz = Tensor(np.full(3, -50.0))
    h = rng.uniform(-0.2, 0.2, 3)
    out = L.gru_cell_ptse(params, h, rng.uniform(-0.2, 0.2, 2), PtseConfig(n=3), simplified=simplified)
    np.testing.assert_array_equal(out.data, h)


def test_gru_full_vs_simplified():
    cfg = PtseConfig(n=3)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        params = _gru(rng, 4, 3, bound=0.1)
        h, x = _small(rng, 4, 0.2), _small(rng, 3, 0.2)
        full = L.gru_cell_ptse(params, h, x, cfg).data
        simple = L.gru_cell_ptse(params, h, x, cfg, simplified=True).data
        assert np.max(np.abs(full - simple)) < 1e-6


def test_gru_batch_matches_rows():
    rng = np.random.default_rng(5)
    params = _gru(rng, 3, 2)
    H, X = rng.uniform(-0.2, 0.2, (4, 3)), rng.uniform(-0.2, 0.2, (4, 2))
    batch = L.gru_cell_ptse(params, H, X, PtseConfig()).data
    rows = np.stack([L.gru_cell_ptse(params, H[i], X[i], PtseConfig()).data for i in range(4)])
    np.testing.assert_allclose(batch, rows, atol=1e-15)


def test_gru_shape_error():
    params = _gru(np.random.default_rng(0), 3, 2)
    with pytest.raises(ShapeError):
        L.gru_cell_ptse(params, np.zeros(4), np.zeros(2), PtseConfig())


# ---------------------------------------------------------------- graph convolution


def test_conv_single_node_first_order():
    x = np.array([[0.3, -0.4]])
    g = Graph(1, [[]], x)
    out = L.graph_conv_ptse(Tensor(np.eye(2)), Tensor(np.zeros(2)), x, g, None, PtseConfig(n=1))
    expected = [_sig(_norm(x[0]) * t) for t in x[0]]
    np.testing.assert_allclose(out.data[0], expected, atol=1e-15)


def test_conv_identical_nodes_identical_outputs():
    rng = np.random.default_rng(0)
    x = np.tile(rng.uniform(-0.3, 0.3, 3), (2, 1))
    g = Graph.from_edges(2, [(0, 1)], x)
    attn = L.AttnParams.init(rng, 4)
    w, b = L.init_weight(rng, 4, 3, 1.0), Tensor(rng.uniform(-0.1, 0.1, 4))
    out = L.graph_conv_ptse(w, b, x, g, attn, PtseConfig(n=3), self_loops="all").data
    np.testing.assert_array_equal(out[0], out[1])


def _star(rng, p=3):
    x = rng.uniform(-0.3, 0.3, (4, p))
    return Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)], x)


def _brute_force_conv(w, b, x, g, attn_w, attn_b, n, self_loops):
    """Per-node, per-term evaluation with scalar loops."""
    d = w.shape[0]
    cfg = PtseConfig(n=n)
    h = [L.linear_ptse(_linear_params(w, b), x[a], cfg).data for a in range(g.num_nodes)]
    ell = [_log_scaled(list(v), n) for v in h]
    outs, weights = [], []
    for a in range(g.num_nodes):
        nbrs = sorted(set(g.neighbors[a]) | ({a} if self_loops == "all" else set()))
        logits = []
        for nb in nbrs:
            pair = ell[a] + ell[nb]
            e = sum(attn_w[0][k] * pair[k] for k in range(2 * d)) + attn_b[0]
            logits.append(e if e > 0 else 0.2 * e)
        mx = max(logits)
        ex = [math.exp(e - mx) for e in logits]
        wts = [e / sum(ex) for e in ex]
        weights.append(wts)
        m = [sum(wts[j] * ell[nb][k] for j, nb in enumerate(nbrs)) for k in range(d)]
        r = _norm(m)
        scale = sum(TANH_C[i - 1] * r ** (2 * i - 1) for i in range(1, n + 1))
        outs.append(_sigma_diamond([scale * t for t in m], n))
    return np.array(outs), weights


@pytest.mark.parametrize("self_loops", ["all", "isolated"])
def test_conv_star_graph_brute_force(self_loops):
    rng = np.random.default_rng(11)
    g = _star(rng)
    attn = L.AttnParams.init(rng, 2, scale=1.0)
    w, b = rng.uniform(-0.5, 0.5, (2, 3)), rng.uniform(-0.1, 0.1, 2)
    out, weights, _ = L.graph_conv_forward(
        Tensor(w), Tensor(b), g.features, g, attn, PtseConfig(n=3), self_loops=self_loops
    )
    dst, _ = g.edge_index(self_loops)
    sums = np.bincount(dst, weights=weights.data)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
    expected, exp_w = _brute_force_conv(w, b, g.features, g, attn.mlp.w.data, attn.mlp.b.data, 3, self_loops)
    np.testing.assert_allclose(out.data, expected, atol=1e-14)
    np.testing.assert_allclose(weights.data, np.concatenate(exp_w), atol=1e-14)


def test_conv_permutation_equivariance():
    rng = np.random.default_rng(3)
    n = 12
    edges = {tuple(sorted(e)) for e in rng.integers(0, n, (20, 2)) if e[0] != e[1]}
    x = rng.uniform(-0.3, 0.3, (n, 4))
    g = Graph.from_edges(n, sorted(edges), x)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    gp = Graph.from_edges(n, [(inv[u], inv[v]) for u, v in edges], x[perm])
    attn = L.AttnParams.init(rng, 3, scale=1.0)
    w, b = L.init_weight(rng, 3, 4, 1.0), Tensor(rng.uniform(-0.1, 0.1, 3))
    cfg = PtseConfig(n=3)
    out = L.graph_conv_ptse(w, b, x, g, attn, cfg, self_loops="all").data
    outp = L.graph_conv_ptse(w, b, x[perm], gp, attn, cfg, self_loops="all").data
    np.testing.assert_allclose(outp, out[perm], atol=1e-12)


def test_conv_isolated_node_policy():
    x = np.zeros((2, 2))
    g = Graph(2, [[], []], x)
    cfg = PtseConfig()
    w, b = Tensor(np.eye(2)), Tensor(np.zeros(2))
    assert L.graph_conv_ptse(w, b, x, g, None, cfg).shape == (2, 2)
    with pytest.raises(GraphError):
        L.graph_conv_ptse(w, b, x, g, None, cfg, self_loops="none")
    with pytest.raises(GraphError):
        L.graph_conv_ptse(w, b, np.zeros((3, 2)), g, None, cfg)


def test_conv_has_no_clamp_or_map_round_trip():
    rng = np.random.default_rng(0)
    g = _star(rng)
    w = L.init_weight(rng, 2, 3, 1.0)
    with Tape() as tape:
        L.graph_conv_ptse(w, Tensor(np.zeros(2)), g.features, g, L.AttnParams.init(rng, 2), PtseConfig())
        ops = set(tape.op_names())
    assert ops.isdisjoint({"maximum", "exp", "log", "tanh"})


# ---------------------------------------------------------------- attention


def _arcosh3(z):
    s, r = 2 * z - 1, 1 / (z * z)
    return (s - s**2 / 2 + s**3 / 3) - (r / 4 + 3 * r**2 / 32 + 5 * r**3 / 96)


def _dist2_arg(x, y):
    diff = sum((a - b) ** 2 for a, b in zip(x, y))
    return 1 + 2 * diff / ((1 - sum(a * a for a in x)) * (1 - sum(b * b for b in y)))


def test_attention_single_value():
    v = np.array([[0.2, -0.1]])
    out = L.attention_ptse(L.AttnParams(), np.array([0.1, 0.1]), np.array([[0.3, 0.0]]), v, PtseConfig())
    np.testing.assert_allclose(out.data, v[0], atol=1e-15)


def test_attention_symmetric_weights():
    q = np.array([0.0, 0.0])
    keys = np.array([[0.2, 0.0], [0.0, 0.2]])
    values = np.array([[0.1, 0.0], [0.0, 0.1]])
    w = L.attention_weights(L.AttnParams(), q, keys, values, PtseConfig())
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_attention_example_by_hand():
    q, keys = [0.3, 0.0], [[0.3, 0.0], [0.0, 0.3]]
    values = [[0.1, 0.0], [0.0, 0.1]]
    alphas = [_sigma_diamond([-_arcosh3(_dist2_arg(q, k))], 3)[0] for k in keys]
    gammas = [1 / math.sqrt(1 - sum(t * t for t in v)) for v in values]
    ag = [a * g for a, g in zip(alphas, gammas)]
    expected = [sum(ag[j] / sum(ag) * values[j][k] for j in range(2)) for k in range(2)]
    out = L.attention_ptse(L.AttnParams(1.0, 0.0), np.array(q), np.array(keys), np.array(values), PtseConfig(n=3))
    np.testing.assert_allclose(out.data, expected, atol=1e-15)
    assert alphas[0] > alphas[1]


def test_attention_errors():
    cfg = PtseConfig()
    q, k = np.zeros(2), np.array([[0.1, 0.0]])
    with pytest.raises(DomainError):
        L.attention_ptse(L.AttnParams(), q, k, np.array([[1.0, 0.0]]), cfg)
    with pytest.raises(NearSingular):
        L.attention_ptse(L.AttnParams(1.0, 1e3), q, k, np.array([[0.1, 0.0]]), cfg)
    with pytest.raises(ConfigError):
        L.AttnParams(beta=0.0)
    with pytest.raises(ShapeError):
        L.attention_ptse(L.AttnParams(), q, k, np.zeros((2, 2)), cfg)


# ---------------------------------------------------------------- regularizer


def test_regularize_zero_lambda():
    out, pen = L.regularize(np.array([0.1, 0.2]), np.array([0.3, -0.4]), PtseConfig(lam=0.0))
    np.testing.assert_array_equal(out.data, [0.1, 0.2])
    assert pen.item() == 0.0


def test_regularize_penalty_and_literal():
    cfg = PtseConfig(lam=0.1)
    f = np.array([0.3, -0.4])
    out, pen = L.regularize(np.array([0.1, 0.2]), f, cfg)
    np.testing.assert_array_equal(out.data, [0.1, 0.2])
    assert pen.item() == pytest.approx(0.07, abs=1e-15)
    out, pen = L.regularize(np.array([0.1, 0.2]), f, cfg, mode="literal")
    np.testing.assert_allclose(out.data, [0.17, 0.27], atol=1e-15)
    with pytest.raises(ConfigError):
        L.regularize(f, f, cfg, mode="l2")


def test_regularize_batch_is_row_mean():
    f = np.array([[0.3, -0.4], [0.1, 0.1]])
    _, pen = L.regularize(f, f, PtseConfig(lam=0.1))
    assert pen.item() == pytest.approx(0.1 * (0.7 + 0.2) / 2, abs=1e-15)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", range(10))
def test_layer_gradients(name, seed):
    assert layer_grad_error(name, seed) < 1e-4
