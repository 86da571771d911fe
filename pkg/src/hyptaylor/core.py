"""Polynomial Taylor-series kernels for tanh, artanh and arcosh.

Every kernel takes a ``PtseConfig`` whose ``n`` is the number of series
terms.  Coefficients are built once per ``(function, n)`` from exact
rationals and evaluated with Horner's scheme on ``x**2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from typing import Literal

import numpy as np

from .errors import CoefficientOverflow, ConfigError, DomainError, DomainWarning

FnId = Literal["tanh", "artanh", "arcosh"]
FN_IDS: tuple[str, ...] = ("tanh", "artanh", "arcosh")
ACTIVATION_MODES: tuple[str, ...] = ("literal", "map-compose")

MAX_BERNOULLI = 64


@dataclass(frozen=True)
class PtseConfig:
    """Settings threaded through every series-based operation.

    n:               number of series terms
    c:               ball curvature
    lam:             weight of the L1 output regularizer
    eps:             guard in the relative error and against division by zero
    activation_mode: ``"literal"`` or ``"map-compose"`` (see ``layers.activation_ptse``)
    """

    n: int = 3
    c: float = 1.0
    lam: float = 1e-3
    eps: float = 1e-9
    activation_mode: str = "literal"

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if not self.c > 0:
            raise ConfigError(f"curvature c must be positive, got {self.c!r}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam!r}")
        if not 0 < self.eps < 1e-6:
            raise ConfigError(f"eps must lie in (0, 1e-6), got {self.eps!r}")
        if self.activation_mode not in ACTIVATION_MODES:
            raise ConfigError(f"unknown activation_mode {self.activation_mode!r}")

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.c)

    def with_(self, **changes) -> "PtseConfig":
        return replace(self, **changes)


@lru_cache(maxsize=None)
def _bernoulli_table(kmax: int) -> tuple[Fraction, ...]:
    # B_m = -1/(m+1) * sum_{j<m} C(m+1, j) B_j, with B_1 = -1/2
    table = [Fraction(1)]
    for m in range(1, kmax + 1):
        acc = sum(math.comb(m + 1, j) * table[j] for j in range(m))
        table.append(-acc / (m + 1))
    return tuple(table)


def bernoulli(k: int) -> Fraction:
    """Return the Bernoulli number B_k as an exact fraction (B_1 = -1/2)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > MAX_BERNOULLI:
        raise CoefficientOverflow(f"Bernoulli index {k} exceeds {MAX_BERNOULLI}")
    return _bernoulli_table(MAX_BERNOULLI)[k]


@lru_cache(maxsize=None)
def tanh_coefficients(n: int) -> tuple[float, ...]:
    """Coefficients of x**(2i-1), i = 1..n, in the tanh Maclaurin series."""
    if 2 * n > MAX_BERNOULLI:
        raise CoefficientOverflow(f"tanh series with n={n} needs B_{2 * n}")
    out = []
    for i in range(1, n + 1):
        p = 2 ** (2 * i)
        # |B_2i| with the alternating sign written explicitly
        num = (-1) ** (i - 1) * p * (p - 1) * abs(bernoulli(2 * i))
        out.append(float(num / math.factorial(2 * i)))
    return tuple(out)


@lru_cache(maxsize=None)
def artanh_coefficients(n: int) -> tuple[float, ...]:
    return tuple(1.0 / (2 * i - 1) for i in range(1, n + 1))


@lru_cache(maxsize=None)
def arcosh_coefficients(n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    # log part: (-1)^(i+1)/i on (2x-1)^i; tail part: prod_j (2j-1)/(2j) / (2i) on x^(-2i)
    log_part = tuple((-1) ** (i + 1) / i for i in range(1, n + 1))
    tail, prod = [], Fraction(1)
    for i in range(1, n + 1):
        prod *= Fraction(2 * i - 1, 2 * i)
        tail.append(float(prod / (2 * i)))
    return log_part, tuple(tail)


def series_coefficients(fn_id: str, n: int) -> tuple[float, ...]:
    if fn_id == "tanh":
        return tanh_coefficients(n)
    if fn_id == "artanh":
        return artanh_coefficients(n)
    raise ConfigError(f"no odd-power coefficient list for {fn_id!r}")


def horner(coeffs, t, out=None):
    """Evaluate ``sum(coeffs[k] * t**k)`` with Horner's scheme.

    When ``out`` is given it must be a preallocated array of t's shape; the
    evaluation then runs in place without temporaries.
    """
    if out is None:
        acc = np.full_like(np.asarray(t, dtype=np.float64), coeffs[-1])
        for a in reversed(coeffs[:-1]):
            acc = acc * t + a
        return acc
    out.fill(coeffs[-1])
    for a in reversed(coeffs[:-1]):
        np.multiply(out, t, out=out)
        np.add(out, a, out=out)
    return out


def _odd_series(coeffs, x, out=None, scratch=None):
    x = np.asarray(x, dtype=np.float64)
    if out is None:
        return x * horner(coeffs, x * x)
    t = np.multiply(x, x, out=scratch)
    horner(coeffs, t, out=out)
    return np.multiply(out, x, out=out)


def tanh_ptse(x, cfg: PtseConfig, out=None, scratch=None):
    """n-term Maclaurin polynomial of tanh. Accurate for |x| well below pi/2."""
    return _odd_series(tanh_coefficients(cfg.n), x, out, scratch)


def artanh_ptse(x, cfg: PtseConfig, out=None, scratch=None):
    """n-term Maclaurin polynomial of artanh.

    Inputs with |x| >= 1 are still evaluated; a ``DomainWarning`` is issued.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(arr) >= 1):
        warnings.warn(
            "artanh series evaluated at |x| >= 1 where it diverges", DomainWarning, stacklevel=2
        )
    return _odd_series(artanh_coefficients(cfg.n), arr, out, scratch)


def arcosh_ptse(x, cfg: PtseConfig):
    """Series for arcosh(x), x >= 1: the ln(2x) expansion in powers of (2x - 1)
    minus the asymptotic tail in powers of 1/x**2.

    The first sum only converges for x <= 1, so large n is accurate only at x = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 1):
        raise DomainError("arcosh series requires x >= 1")
    log_part, tail = arcosh_coefficients(cfg.n)
    s = 2 * x - 1
    r = 1.0 / (x * x)
    return s * horner(log_part, s) - r * horner(tail, r)


def exact_kernel(fn_id: str, x):
    """Reference values from numpy's transcendental routines."""
    x = np.asarray(x, dtype=np.float64)
    if fn_id == "tanh":
        return np.tanh(x)
    if fn_id == "artanh":
        if np.any(np.abs(x) >= 1):
            raise DomainError("artanh requires |x| < 1")
        return np.arctanh(x)
    if fn_id == "arcosh":
        if np.any(x < 1):
            raise DomainError("arcosh requires x >= 1")
        return np.arccosh(x)
    raise ConfigError(f"unknown function {fn_id!r}")


def ptse_kernel(fn_id: str, x, cfg: PtseConfig):
    if fn_id == "tanh":
        return tanh_ptse(x, cfg)
    if fn_id == "artanh":
        return artanh_ptse(x, cfg)
    if fn_id == "arcosh":
        return arcosh_ptse(x, cfg)
    raise ConfigError(f"unknown function {fn_id!r}")


def eta(fn_id: str, x, cfg: PtseConfig):
    """Relative approximation error |f - PTSE(f)| / |f + eps|."""
    exact = exact_kernel(fn_id, x)
    approx = ptse_kernel(fn_id, x, cfg)
    return np.abs(exact - approx) / np.abs(exact + cfg.eps)
