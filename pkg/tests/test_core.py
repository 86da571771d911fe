import math
import warnings
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyptaylor.core import (
    PtseConfig,
    arcosh_ptse,
    artanh_coefficients,
    artanh_ptse,
    bernoulli,
    eta,
    exact_kernel,
    horner,
    tanh_coefficients,
    tanh_ptse,
)
from hyptaylor.errors import CoefficientOverflow, ConfigError, DomainError, DomainWarning

mp.mp.dps = 40


def cfg(n, **kw):
    return PtseConfig(n=n, **kw)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize(
    "kwargs",
    [dict(n=0), dict(c=0.0), dict(c=-1.0), dict(lam=-0.1), dict(eps=0.0), dict(eps=1e-6),
     dict(activation_mode="bogus")],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ConfigError):
        PtseConfig(**kwargs)


def test_config_defaults():
    c = PtseConfig()
    assert c.eps == 1e-9 and c.activation_mode == "literal"


# ------------------------------------------------------------------ bernoulli


@pytest.mark.parametrize("k", range(0, 65))
def test_bernoulli_matches_mpmath(k):
    assert float(bernoulli(k)) == pytest.approx(float(mp.bernoulli(k)), rel=1e-14, abs=0)


def test_bernoulli_examples():
    assert bernoulli(0) == 1
    assert bernoulli(1) == Fraction(-1, 2)
    assert bernoulli(2) == Fraction(1, 6)
    assert bernoulli(4) == Fraction(-1, 30)
    assert all(bernoulli(k) == 0 for k in range(3, 64, 2))


def test_bernoulli_overflow():
    with pytest.raises(CoefficientOverflow):
        bernoulli(65)
    with pytest.raises(CoefficientOverflow):
        tanh_coefficients(33)


# ------------------------------------------------------------------ coefficients


def test_tanh_first_five_coefficients():
    expected = [1, -1 / 3, 2 / 15, -17 / 315, 62 / 2835]
    assert tanh_coefficients(5) == pytest.approx(expected, rel=1e-15)


def test_tanh_coefficients_match_taylor_of_tanh():
    # independent oracle: mpmath's numerical Taylor expansion of tanh
    n = 12
    ref = mp.taylor(mp.tanh, 0, 2 * n)
    odd = [float(ref[2 * i - 1]) for i in range(1, n + 1)]
    assert tanh_coefficients(n) == pytest.approx(odd, rel=1e-12)


def test_artanh_coefficients():
    assert artanh_coefficients(4) == pytest.approx([1, 1 / 3, 1 / 5, 1 / 7])


# ------------------------------------------------------------------ kernels


def test_tanh_examples():
    assert tanh_ptse(0.0, cfg(7)) == 0
    assert tanh_ptse(0.5, cfg(2)) == pytest.approx(0.5 - 0.5**3 / 3, abs=1e-15)
    assert tanh_ptse(0.5, cfg(2)) == pytest.approx(0.458333, abs=1e-6)
    assert tanh_ptse(0.5, cfg(3)) == pytest.approx(0.462500, abs=1e-6)


def test_artanh_examples():
    assert artanh_ptse(0.0, cfg(3)) == 0
    assert artanh_ptse(0.5, cfg(3)) == pytest.approx(0.5 + 0.125 / 3 + 0.03125 / 5, abs=1e-15)
    assert artanh_ptse(0.5, cfg(3)) == pytest.approx(0.547917, abs=1e-6)


def test_artanh_at_09_respects_geometric_tail_bound():
    n, x = 10, 0.9
    err = abs(artanh_ptse(x, cfg(n)) - float(mp.atanh(x)))
    bound = x ** (2 * n + 1) / ((2 * n + 1) * (1 - x * x))
    assert err <= bound
    assert err == pytest.approx(0.021019, abs=1e-6)


def test_artanh_out_of_domain_warns_but_returns():
    with pytest.warns(DomainWarning):
        val = artanh_ptse(1.2, cfg(3))
    assert val == pytest.approx(1.2 + 1.2**3 / 3 + 1.2**5 / 5)


def test_arcosh_examples():
    assert arcosh_ptse(1.0, cfg(1)) == pytest.approx(0.75, abs=1e-15)
    v = arcosh_ptse(1.05, cfg(3))
    # hand evaluation of the printed three-term sum
    s, x = 2 * 1.05 - 1, 1.05
    hand = (s - s**2 / 2 + s**3 / 3) - (0.5 / (2 * x**2) + 0.375 / (4 * x**4) + 0.3125 / (6 * x**6))
    assert v == pytest.approx(hand, rel=1e-14)
    exact = float(mp.acosh(1.05))
    assert exact == pytest.approx(0.314925, abs=1e-6)
    assert eta("arcosh", 1.05, cfg(3)) == pytest.approx(abs(exact - v) / exact, rel=1e-7)


def test_arcosh_at_one_tends_to_zero_slowly():
    # the 1/x^2 tail sums to ln 2 with terms ~ i^(-3/2): residual shrinks like n^(-1/2)
    vals = [abs(float(arcosh_ptse(1.0, cfg(n)))) for n in (1, 4, 16, 30)]
    assert vals[-1] < vals[0]
    assert vals[-1] < 0.1


def test_arcosh_domain():
    with pytest.raises(DomainError):
        arcosh_ptse(0.99, cfg(2))


def test_exact_kernel():
    assert exact_kernel("tanh", 0.0) == 0
    assert exact_kernel("artanh", 0.5) == pytest.approx(0.5 * math.log(3), abs=1e-15)
    assert exact_kernel("artanh", 0.5) == pytest.approx(0.549306, abs=1e-6)
    assert exact_kernel("arcosh", 1.43473) == pytest.approx(
        math.log(1.43473 + math.sqrt(1.43473**2 - 1)), abs=1e-15
    )
    assert exact_kernel("arcosh", 1.43473) == pytest.approx(0.901599, abs=1e-6)
    with pytest.raises(DomainError):
        exact_kernel("artanh", 1.0)
    with pytest.raises(DomainError):
        exact_kernel("arcosh", 0.5)
    with pytest.raises(ConfigError):
        exact_kernel("cosh", 0.5)


def test_eta_examples():
    assert eta("tanh", 0.0, cfg(4)) == 0
    assert eta("tanh", 0.5, cfg(2)) == pytest.approx(0.00819, abs=1e-5)
    assert eta("artanh", 0.5, cfg(20)) < 1e-9


# ------------------------------------------------------------------ properties


@given(st.floats(-3, 3), st.integers(1, 30))
def test_oddness(x, n):
    c = cfg(n)
    assert tanh_ptse(-x, c) == -tanh_ptse(x, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainWarning)
        assert artanh_ptse(-x, c) == -artanh_ptse(x, c)


def test_convergence_bounds():
    xs = np.linspace(-0.5, 0.5, 1001)
    assert np.max(np.abs(tanh_ptse(xs, cfg(10)) - np.tanh(xs))) < 1e-6
    assert np.max(np.abs(artanh_ptse(xs, cfg(10)) - np.arctanh(xs))) < 1e-6
    xs = np.linspace(-0.9, 0.9, 1001)
    assert np.max(np.abs(tanh_ptse(xs, cfg(10)) - np.tanh(xs))) < 1e-3


@pytest.mark.parametrize("fn", ["tanh", "artanh"])
@pytest.mark.parametrize("x", [0.05, 0.2, 0.5, 0.75, 0.9])
def test_eta_non_increasing_in_n(fn, x):
    etas = [float(eta(fn, x, cfg(n))) for n in range(1, 25)]
    assert all(b <= a + 1e-12 for a, b in zip(etas, etas[1:]))


def test_eta_grows_with_x():
    etas = [float(eta("tanh", x, cfg(3))) for x in (0.1, 0.3, 0.5, 0.7)]
    assert etas == sorted(etas)


@settings(max_examples=200)
@given(st.floats(-1.0, 1.0), st.integers(1, 16))
def test_horner_matches_naive_summation(x, n):
    a = tanh_coefficients(n)
    naive = math.fsum(a[i] * x ** (2 * i + 1) for i in range(n))
    val = float(tanh_ptse(x, cfg(n)))
    assert abs(val - naive) <= 1e-12 * max(abs(naive), 1e-300) + 1e-300


def test_horner_in_place_matches_allocating_path():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 257)
    out, scratch = np.empty_like(x), np.empty_like(x)
    for n in (1, 2, 5, 9):
        expected = tanh_ptse(x, cfg(n))
        np.testing.assert_array_equal(tanh_ptse(x, cfg(n), out=out, scratch=scratch), expected)
    coeffs = (1.0, 2.0, 3.0)
    np.testing.assert_allclose(horner(coeffs, x), 1 + 2 * x + 3 * x * x, rtol=1e-14)
