"""A rank-one PSD construction that beats the small-s Hoeffding lower bound.

A linear statistic ``sum_i a_i xi_i`` with ``sum a_i^2 = 2`` has lower tail
exponent at best ``t^2 / (4 E xi^2)`` when every coefficient is tiny. Mixing
three coefficient sizes, with ``beta * m_i`` copies of ``alpha * b_i``, turns
the exponent into ``(t^2 / 2) * rate_expression``, and the three sizes can be
realised as the entries of ``(alpha / 2) v v^T`` for a two-valued ``v``.

For skewed laws with a negative third moment, the expression drops below the
baseline ``1 / (2 E xi^2)`` once ``delta`` is small and ``eps`` is much
smaller. The relative margin is ``eta``.

``Lambda*(Lambda'(b))`` is always evaluated as ``b Lambda'(b) - Lambda(b)``,
which is finite for every finite ``b`` even after ``Lambda'(b)`` has rounded
onto the support edge, where :func:`trideficit.dist.legendre` returns infinity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np
from scipy.optimize import minimize_scalar

from trideficit.dist import (
    EdgeDistribution,
    cgf,
    cgf_derivative,
    legendre,
    stationary_point,
)
from trideficit.rare import loglog_slope

__all__ = [
    "SEARCH_CSV_FIELDS",
    "CounterexampleDomainError",
    "CounterexampleParams",
    "SearchResult",
    "TaylorReport",
    "construction",
    "conjugate_at_gradient",
    "rate_expression",
    "baseline_rate",
    "search_eta",
    "default_grid",
    "plant_sizes",
    "psd_plant",
    "numeric_conjugate",
    "conjugate_third_derivative",
    "taylor_lemma_checks",
    "write_search_csv",
]

SEARCH_CSV_FIELDS = ("q", "eps", "delta", "rate_value", "baseline", "eta")

DELTA_RANGE = (1e-2, 0.3)
EPS_MIN = 1e-4


class CounterexampleDomainError(ValueError):
    """A coefficient is outside the range where the conjugate stays finite."""


def construction(eps: float, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicities ``m`` and coefficient sizes ``b`` for the three blocks."""
    if not (eps > 0 and delta > 0 and math.isfinite(eps) and math.isfinite(delta)):
        raise ValueError(f"eps and delta must be positive and finite, got {eps!r}, {delta!r}")
    e, d = np.float64(eps), np.float64(delta)
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        m = np.array([1.0 / e**2, 2.0 * e / d**3, e**4 / d**6])
        b = np.array([e, -d, d**2 / e])
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b)) and np.all(m > 0)):
        raise CounterexampleDomainError(f"construction overflows at eps={eps!r}, delta={delta!r}")
    return m, b


def conjugate_at_gradient(dist: EdgeDistribution, b: float) -> tuple[float, float]:
    """``(Lambda'(b), Lambda*(Lambda'(b)))`` through ``b Lambda'(b) - Lambda(b)``."""
    if not math.isfinite(b):
        raise CounterexampleDomainError(f"coefficient must be finite, got {b!r}")
    slope = cgf_derivative(dist, b)
    value = b * slope - cgf(dist, b)
    if not (math.isfinite(slope) and math.isfinite(value)):
        raise CounterexampleDomainError(f"conjugate is not finite at b={b!r}")
    # convexity makes the conjugate non-negative; clip rounding at tiny b
    return slope, max(value, 0.0)


def _sums(dist: EdgeDistribution, eps: float, delta: float):
    m, b = construction(eps, delta)
    pairs = [conjugate_at_gradient(dist, float(x)) for x in b]
    slope = np.array([p[0] for p in pairs])
    conj = np.array([p[1] for p in pairs])
    return m, b, slope, float(m @ b**2), float(m @ conj), float(m @ (b * slope))


def rate_expression(dist: EdgeDistribution, eps: float, delta: float) -> float:
    """``(sum m b^2)(sum m Lambda*(Lambda'(b))) / (sum m b Lambda'(b))^2``."""
    *_, sq, conj, lin = _sums(dist, eps, delta)
    if lin <= 0:
        raise CounterexampleDomainError("linear term must be positive")
    return sq * conj / lin**2


def baseline_rate(dist: EdgeDistribution) -> float:
    """The small-coefficient value ``1 / (2 E xi^2)``."""
    return 1.0 / (2.0 * dist.variance)


@dataclass(frozen=True)
class CounterexampleParams:
    """One fully resolved instance of the construction at tail level ``t``."""

    eps: float
    delta: float
    t: float
    m_values: tuple[float, float, float]
    b_values: tuple[float, float, float]
    alpha: float
    beta: float
    t_split: tuple[float, float, float]
    rate_value: float
    baseline: float

    def __post_init__(self) -> None:
        if min(self.m_values) <= 0:
            raise ValueError("multiplicities must be positive")
        b1, b2, b3 = self.b_values
        if not b2 < 0 < min(b1, b3):
            raise ValueError("need b2 < 0 < b1, b3")

    @classmethod
    def build(cls, dist: EdgeDistribution, eps: float, delta: float, t: float = 1.0) -> CounterexampleParams:
        if not t > 0:
            raise ValueError(f"t must be positive, got {t!r}")
        m, b, slope, sq, conj, lin = _sums(dist, eps, delta)
        if lin <= 0:
            raise CounterexampleDomainError("linear term must be positive")
        # solves sum t_i = t and alpha^2 beta sum m b^2 = 2 simultaneously
        beta = t * t * sq / (2.0 * lin * lin)
        alpha = 2.0 * lin / (t * sq)
        t_split = alpha * beta * m * b * slope
        return cls(
            eps=float(eps),
            delta=float(delta),
            t=float(t),
            m_values=tuple(float(x) for x in m),
            b_values=tuple(float(x) for x in b),
            alpha=float(alpha),
            beta=float(beta),
            t_split=tuple(float(x) for x in t_split),
            rate_value=sq * conj / lin**2,
            baseline=baseline_rate(dist),
        )

    @property
    def eta(self) -> float:
        return 1.0 - self.rate_value / self.baseline

    @property
    def square_sum(self) -> float:
        return float(np.dot(self.m_values, np.square(self.b_values)))

    def constraint_residuals(self) -> tuple[float, float]:
        """``|sum t_i - t|`` and ``|alpha^2 beta sum m b^2 - 2|``."""
        return (
            abs(math.fsum(self.t_split) - self.t),
            abs(self.alpha**2 * self.beta * self.square_sum - 2.0),
        )

    def log_tail_bound(self) -> float:
        """Leading term of the lower bound on ``ln P(sum a_i xi_i > t)``."""
        return -0.5 * self.t**2 * self.rate_value

    def plant(self, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """The PSD matrix realising these coefficients; see :func:`psd_plant`."""
        return psd_plant(self.eps, self.delta, self.alpha, self.beta, size)


@dataclass(frozen=True)
class SearchResult:
    best_eps: float
    best_delta: float
    eta: float
    rate_value: float
    baseline: float
    q: float | None
    rows: list[tuple[float, float, float, float]] = field(repr=False, default_factory=list)

    def __iter__(self):
        # unpacks like the (eps, delta, eta) triple
        return iter((self.best_eps, self.best_delta, self.eta))

    def csv_rows(self, best_only: bool = False) -> list[tuple]:
        q = math.nan if self.q is None else self.q
        if best_only:
            return [(q, self.best_eps, self.best_delta, self.rate_value, self.baseline, self.eta)]
        return [(q, e, d, r, self.baseline, 1.0 - r / self.baseline) for e, d, r, _ in self.rows]


def default_grid(n_delta: int = 40, n_eps: int = 40, eps_min: float = EPS_MIN) -> list[tuple[float, float]]:
    """``(eps, delta)`` pairs: small delta first, then eps from ``eps_min`` to ``delta^2``."""
    if n_delta < 1 or n_eps < 1:
        raise ValueError("grid sizes must be positive")
    pairs = []
    for d in np.logspace(math.log10(DELTA_RANGE[0]), math.log10(DELTA_RANGE[1]), n_delta):
        top = max(d * d, eps_min)
        for e in np.logspace(math.log10(eps_min), math.log10(top), n_eps):
            pairs.append((float(e), float(d)))
    return pairs


def search_eta(
    dist: EdgeDistribution,
    eps_grid: Sequence[float] | None = None,
    delta_grid: Sequence[float] | None = None,
    n_delta: int = 40,
    n_eps: int = 40,
) -> SearchResult:
    """Grid-minimise :func:`rate_expression` and report the best margin ``eta``.

    With both grids omitted the search runs over :func:`default_grid`. Explicit
    grids are used as a full product. Ties go to the earliest grid point.
    """
    if eps_grid is None and delta_grid is None:
        pairs = default_grid(n_delta, n_eps)
    else:
        if eps_grid is None or delta_grid is None:
            raise ValueError("give both grids or neither")
        if len(eps_grid) == 0 or len(delta_grid) == 0:
            raise ValueError("grids must be non-empty")
        pairs = [(float(e), float(d)) for d in delta_grid for e in eps_grid]
    base = baseline_rate(dist)
    rows = []
    for e, d in pairs:
        r = rate_expression(dist, e, d)
        rows.append((e, d, r, 1.0 - r / base))
    best = min(range(len(rows)), key=lambda i: rows[i][2])
    e, d, r, eta = rows[best]
    return SearchResult(best_eps=e, best_delta=d, eta=eta, rate_value=r, baseline=base, q=dist.q, rows=rows)


def write_search_csv(result: SearchResult, out: TextIO, best_only: bool = False) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SEARCH_CSV_FIELDS)
    for row in result.csv_rows(best_only):
        w.writerow([format(x, ".17g") for x in row])


def plant_sizes(eps: float, delta: float, beta: float) -> tuple[int, int]:
    """Rounded sizes of the positive and negative parts of the plant vector.

    The vector takes ``sqrt(eps)`` on ``sqrt(2 beta) / eps`` coordinates and
    ``-delta / sqrt(eps)`` on ``sqrt(2 beta) eps^2 / delta^3`` coordinates, so
    its outer product has ``2 beta m_i`` entries equal to ``b_i``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    construction(eps, delta)
    scale = math.sqrt(2.0 * beta)
    return round(scale / eps), round(scale * eps**2 / delta**3)


def psd_plant(
    eps: float, delta: float, alpha: float, beta: float, size: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """The two-valued vector ``v`` and the rank-one PSD matrix ``(alpha / 2) v v^T``.

    ``size`` zero-pads both to that dimension.
    """
    pos, neg = plant_sizes(eps, delta, beta)
    if pos == 0 or neg == 0:
        raise ValueError(f"rounding leaves an empty part: sizes ({pos}, {neg}); increase beta")
    dim = pos + neg if size is None else int(size)
    if dim < pos + neg:
        raise ValueError(f"plant needs {pos + neg} coordinates, size is {dim}")
    v = np.zeros(dim)
    v[:pos] = math.sqrt(eps)
    v[pos : pos + neg] = -delta / math.sqrt(eps)
    return v, 0.5 * alpha * np.outer(v, v)


# -- Taylor and conjugacy checks -------------------------------------------


def numeric_conjugate(f: Callable[[float], float], y: float, bracket: tuple[float, float] = (-50.0, 50.0)) -> float:
    """``sup_x {x y - f(x)}`` over a bounded interval, by scalar minimisation."""
    res = minimize_scalar(lambda x: f(x) - x * y, bounds=bracket, method="bounded", options={"xatol": 1e-12})
    return float(-res.fun)


def _second_conjugate_derivative(dist: EdgeDistribution, y: float) -> float:
    # (Lambda*)''(y) = 1 / Lambda''(x) where Lambda'(x) = y
    x = stationary_point(dist, y)
    return 1.0 / cgf_derivative(dist, x, order=2)


def conjugate_third_derivative(dist: EdgeDistribution, step: float = 1e-3) -> float:
    """``(Lambda*)'''(0)`` from central differences of ``1 / Lambda''``, Richardson-extrapolated."""
    def central(h: float) -> float:
        return (_second_conjugate_derivative(dist, h) - _second_conjugate_derivative(dist, -h)) / (2.0 * h)

    return (4.0 * central(step / 2.0) - central(step)) / 3.0


@dataclass(frozen=True)
class TaylorReport:
    """Numerical checks of the two conjugacy lemmas for one law."""

    identity_max_error: float
    quadratic_coefficient: float
    half_variance: float
    cubic_coefficient: float
    cubic_coefficient_fd: float
    third_conjugate_fd: float
    third_conjugate_exact: float
    residual_slope: float
    growth_ratios: tuple[float, ...]
    third_moment: float

    @property
    def growth_vanishes(self) -> bool:
        r = self.growth_ratios
        return all(b <= a for a, b in zip(r, r[1:])) and r[-1] < 1e-3 * r[0]


def taylor_lemma_checks(
    dist: EdgeDistribution,
    identity_grid: Sequence[float] | None = None,
    quad_eps: float = 1e-2,
    residual_eps: Sequence[float] | None = None,
) -> TaylorReport:
    """Check ``f*(f'(x)) = x f'(x) - f(x)``, the cubic expansion of ``Lambda*(Lambda'(eps))``
    and the sub-quadratic growth of ``Lambda``.

    The quadratic coefficient is read off the even part
    ``(g(eps) + g(-eps)) / (2 eps^2)`` of ``g = Lambda* o Lambda'``, which
    cancels the cubic term. The residual slope is the log-log slope of
    ``|g(eps) - L eps^2 / 2 - C eps^3|`` over ``residual_eps``.
    """
    grid = np.linspace(-2.0, 2.0, 41) if identity_grid is None else np.asarray(identity_grid, float)
    worst = 0.0
    for x in grid:
        slope = cgf_derivative(dist, float(x))
        direct = legendre(dist, slope)
        if math.isinf(direct):
            continue
        worst = max(worst, abs(direct - (x * slope - cgf(dist, float(x)))))

    def g(e: float) -> float:
        return legendre(dist, cgf_derivative(dist, e))

    var = dist.variance
    kappa3 = dist.moment(3)
    quad = (g(quad_eps) + g(-quad_eps)) / (2.0 * quad_eps**2)
    exact3 = -kappa3 / var**3
    fd3 = conjugate_third_derivative(dist)
    cubic = (exact3 * var**3 + 3.0 * kappa3) / 6.0
    cubic_fd = (fd3 * var**3 + 3.0 * kappa3) / 6.0

    eps = np.logspace(-3, -1, 9) if residual_eps is None else np.asarray(residual_eps, float)
    resid = np.array([abs(g(e) - 0.5 * var * e * e - cubic * e**3) for e in eps])
    slope = loglog_slope(eps, resid)

    s = np.logspace(1, 6, 11)
    growth = tuple(cgf(dist, float(x)) / x**2 for x in s)

    return TaylorReport(
        identity_max_error=worst,
        quadratic_coefficient=quad,
        half_variance=0.5 * var,
        cubic_coefficient=cubic,
        cubic_coefficient_fd=cubic_fd,
        third_conjugate_fd=fd3,
        third_conjugate_exact=exact3,
        residual_slope=slope,
        growth_ratios=growth,
        third_moment=kappa3,
    )
