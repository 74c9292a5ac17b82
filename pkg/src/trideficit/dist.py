"""Entry laws, their cumulant-generating functions and Legendre transforms.

Every law here is finitely supported and centered. The cumulant-generating
function is ``cgf(s) = ln E exp(s * xi)`` and ``legendre(u)`` is its convex
conjugate. Outside the open convex hull of the support the conjugate is
``math.inf``; callers must test for it with :func:`math.isinf` and never
compare against a large float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "INFINITE",
    "EdgeDistribution",
    "RateFunctionResult",
    "TriangleExponent",
    "centered_bernoulli",
    "finite_support",
    "cgf",
    "cgf_derivative",
    "cumulants",
    "legendre",
    "stationary_point",
    "rate_ratio",
    "rate_constant",
    "subgaussian_constant",
    "golden_section_min",
    "triangle_exponent",
]

#: Value of the Legendre transform outside the support hull.
INFINITE = math.inf

_PROB_TOL = 1e-12
_MEAN_TOL = 1e-12
# |y| below this uses the Taylor form of expm1(y) - y
_SMALL_ARG = 0.1
_TAYLOR_TERMS = 14


@dataclass(frozen=True)
class EdgeDistribution:
    """A centered, finitely supported law for one off-diagonal entry.

    ``q`` is set only for the centered Bernoulli family, where the atoms are
    ``1 - q`` (probability ``q``) and ``-q`` (probability ``1 - q``).
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]
    q: float | None = None

    def __post_init__(self) -> None:
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be non-empty and equally long")
        p = np.asarray(self.probs, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if np.any(p < 0) or not np.all(np.isfinite(v)):
            raise ValueError("probabilities must be non-negative and values finite")
        if abs(p.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        mean = float(p @ v)
        if abs(mean) > _MEAN_TOL:
            raise ValueError(f"entry law must have mean zero, got {mean!r}")
        if self.q is not None and len(self.values) != 2:
            raise ValueError("centered Bernoulli law must have exactly two atoms")

    @property
    def kind(self) -> str:
        return "centered_bernoulli" if self.q is not None else "finite_support"

    @cached_property
    def _v(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @cached_property
    def _p(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @cached_property
    def _logp(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._p)

    @cached_property
    def support(self) -> tuple[float, float]:
        """Closed hull ``(min, max)`` of the atoms carrying positive mass."""
        live = self._v[self._p > 0]
        return float(live.min()), float(live.max())

    @cached_property
    def variance(self) -> float:
        return float(self._p @ self._v**2)

    def moment(self, k: int) -> float:
        return float(self._p @ self._v**k)

    @cached_property
    def cumulants(self) -> tuple[float, float, float]:
        m2, m3, m4 = self.moment(2), self.moment(3), self.moment(4)
        return m2, m3, m4 - 3.0 * m2 * m2


def centered_bernoulli(q: float) -> EdgeDistribution:
    """Law of ``1{edge} - q`` for an edge present with probability ``q``."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q!r}")
    return EdgeDistribution(values=(1.0 - q, -q), probs=(q, 1.0 - q), q=float(q))


def finite_support(atoms: Sequence[tuple[float, float]]) -> EdgeDistribution:
    """Build a law from ``(value, probability)`` pairs."""
    values = tuple(float(v) for v, _ in atoms)
    probs = tuple(float(p) for _, p in atoms)
    return EdgeDistribution(values=values, probs=probs)


def _expm1_minus_linear(y: np.ndarray) -> np.ndarray:
    """``exp(y) - 1 - y`` without cancellation near zero."""
    y = np.asarray(y, dtype=float)
    out = np.expm1(y) - y
    small = np.abs(y) < _SMALL_ARG
    if np.any(small):
        ys = y[small]
        term = ys * ys / 2.0
        acc = term.copy()
        for k in range(3, _TAYLOR_TERMS):
            term = term * ys / k
            acc += term
        out[small] = acc
    return out


def _cgf_array(dist: EdgeDistribution, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    y = np.multiply.outer(s, dist._v)
    out = np.empty(s.shape)
    small = np.max(np.abs(y), axis=-1) <= _SMALL_ARG
    if np.any(small):
        mean = float(dist._p @ dist._v)
        out[small] = np.log1p(_expm1_minus_linear(y[small]) @ dist._p + s[small] * mean)
    big = ~small
    if np.any(big):
        z = y[big] + dist._logp
        top = z.max(axis=-1)
        out[big] = top + np.log(np.exp(z - top[:, None]).sum(axis=-1))
    return out


def _dcgf_array(dist: EdgeDistribution, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    v = dist._v
    y = np.multiply.outer(s, v)
    out = np.empty(s.shape)
    small = np.max(np.abs(y), axis=-1) <= _SMALL_ARG
    if np.any(small):
        e = np.expm1(y[small])
        # sum p v = 0 up to rounding, so the numerator keeps only the expm1 part
        num = (e * v) @ dist._p + float(dist._p @ v)
        out[small] = num / (1.0 + e @ dist._p)
    big = ~small
    if np.any(big):
        z = y[big] + dist._logp
        w = np.exp(z - z.max(axis=-1, keepdims=True))
        out[big] = (w @ v) / w.sum(axis=-1)
    return out


def cgf(dist: EdgeDistribution, s: float) -> float:
    """Cumulant-generating function ``ln E exp(s xi)``."""
    s = float(s)
    if not math.isfinite(s):
        raise ValueError("s must be finite")
    return float(_cgf_array(dist, np.array([s]))[0])


def cgf_derivative(dist: EdgeDistribution, s: float, order: int = 1) -> float:
    """Derivatives of the cgf: tilted mean, variance and third central moment."""
    s = float(s)
    if order == 1:
        return float(_dcgf_array(dist, np.array([s]))[0])
    if order not in (2, 3):
        raise ValueError("order must be 1, 2 or 3")
    y = s * dist._v + dist._logp
    w = np.exp(y - y.max())
    w /= w.sum()
    c = dist._v - float(w @ dist._v)
    return float(w @ c**order)


def cumulants(dist: EdgeDistribution) -> tuple[float, float, float]:
    """Second, third and fourth cumulants of the law."""
    return dist.cumulants


def _stationary_array(dist: EdgeDistribution, u: np.ndarray, max_iter: int = 1100) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    lo_v, hi_v = dist.support
    bound = 1.0 / dist.variance
    for _ in range(2000):
        up, down = _dcgf_array(dist, np.array([bound, -bound]))
        if (up >= u.max() or up >= hi_v) and (down <= u.min() or down <= lo_v):
            break
        bound *= 2.0
    lo = np.full(u.shape, -bound)
    hi = np.full(u.shape, bound)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if np.max(hi - lo) <= 1e-15 * max(1.0, float(np.max(np.abs(mid)))):
            break
        below = _dcgf_array(dist, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def stationary_point(dist: EdgeDistribution, u: float) -> float:
    """Solve ``cgf'(x) = u`` by bisection; ``u`` must lie inside the hull."""
    lo_v, hi_v = dist.support
    if not lo_v < u < hi_v:
        raise ValueError(f"u={u!r} outside the open support hull ({lo_v}, {hi_v})")
    if u == 0.0:
        return 0.0
    return float(_stationary_array(dist, np.array([float(u)]))[0])


def _legendre_array(dist: EdgeDistribution, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    lo_v, hi_v = dist.support
    out = np.full(u.shape, INFINITE)
    if dist.q is not None:
        q = dist.q
        r = q + u
        inside = (r > 0) & (r < 1)
        ui, ri = u[inside], r[inside]
        out[inside] = ri * np.log1p(ui / q) + (1 - ri) * np.log1p(-ui / (1 - q))
        return out
    inside = (u > lo_v) & (u < hi_v)
    if np.any(inside):
        ui = u[inside]
        x = _stationary_array(dist, ui)
        out[inside] = np.maximum(x * ui - _cgf_array(dist, x), 0.0)
        out[inside & (u == 0)] = 0.0
    return out


def legendre(dist: EdgeDistribution, u: float) -> float:
    """Convex conjugate ``sup_x {x u - cgf(x)}``; ``INFINITE`` off the hull."""
    return float(_legendre_array(dist, np.array([float(u)]))[0])


def _series_scale(dist: EdgeDistribution) -> float:
    return 1e-4 * math.sqrt(dist.variance)


def _rate_ratio_array(dist: EdgeDistribution, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    k2, k3, k4 = dist.cumulants
    near = np.abs(s) <= _series_scale(dist)
    out = np.empty(s.shape)
    sn = s[near]
    # Cramer series of the conjugate: u^2/(2k2) - k3 u^3/(6k2^3) + (3k3^2 - k2k4) u^4/(24k2^5)
    out[near] = 1.0 / (2 * k2) - k3 * sn / (6 * k2**3) + (3 * k3**2 - k2 * k4) * sn * sn / (24 * k2**5)
    far = ~near
    out[far] = _legendre_array(dist, s[far]) / (s[far] * s[far])
    return out


def rate_ratio(dist: EdgeDistribution, s: float) -> float:
    """``legendre(s) / s**2``, continued at ``s = 0`` by ``1 / (2 Var)``."""
    return float(_rate_ratio_array(dist, np.array([float(s)]))[0])


def _cgf_ratio_array(dist: EdgeDistribution, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    k2, k3, k4 = dist.cumulants
    near = np.abs(s) <= _series_scale(dist)
    out = np.empty(s.shape)
    sn = s[near]
    out[near] = k2 / 2 + k3 * sn / 6 + k4 * sn * sn / 24
    far = ~near
    out[far] = _cgf_array(dist, s[far]) / (s[far] * s[far])
    return out


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_min(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, max_iter: int = 500
) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on the open interval ``(lo, hi)``.

    Only interior points are evaluated. Returns ``(argmin, min)`` once the
    bracket is narrower than ``tol``.
    """
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _grid_then_golden(
    f: Callable[[np.ndarray], np.ndarray], grid: np.ndarray, lo: float, hi: float
) -> tuple[float, float]:
    """Coarse grid search followed by golden-section refinement.

    ``f`` is vectorised; infinite values are skipped.
    """
    vals = np.asarray(f(grid), dtype=float)
    finite = np.isfinite(vals)
    if not finite.any():
        raise ValueError("objective is infinite on the whole grid")
    vals[~finite] = np.inf
    k = int(np.argmin(vals))
    a = grid[k - 1] if k > 0 else lo
    b = grid[k + 1] if k + 1 < len(grid) else hi
    x, fx = golden_section_min(lambda z: float(f(np.array([z]))[0]), float(a), float(b))
    if fx <= vals[k]:
        return x, fx
    return float(grid[k]), float(vals[k])


@dataclass(frozen=True)
class RateFunctionResult:
    L: float
    s_star: float
    subg_const: float
    duality_residual: float


def subgaussian_constant(dist: EdgeDistribution) -> tuple[float, float]:
    """``sup_s cgf(s)/s**2`` over the real line, with its maximiser."""
    sigma = math.sqrt(dist.variance)
    half = np.logspace(-3, 4, 1401) / sigma
    grid = np.concatenate([-half[::-1], [0.0], half])
    x, neg = _grid_then_golden(lambda s: -_cgf_ratio_array(dist, s), grid, grid[0] * 2, grid[-1] * 2)
    return -neg, x


def rate_constant(dist: EdgeDistribution, positive_only: bool = False) -> RateFunctionResult:
    """Minimise ``legendre(s)/s**2`` over the support hull.

    A grid with step 1e-3 of the hull width locates the basin, then golden
    section refines it. With ``positive_only`` the search covers ``[0, max)``.
    """
    if abs(dist.moment(1)) > _MEAN_TOL:
        raise ValueError("rate constant needs a centered law")
    lo, hi = dist.support
    if positive_only:
        lo = 0.0
        grid = lo + (hi - lo) * np.arange(0, 1000) / 1000.0
    else:
        grid = lo + (hi - lo) * np.arange(1, 1000) / 1000.0
    s_star, L = _grid_then_golden(lambda s: _rate_ratio_array(dist, s), grid, lo, hi)
    subg, _ = subgaussian_constant(dist)
    return RateFunctionResult(L=L, s_star=s_star, subg_const=subg, duality_residual=abs(4 * subg * L - 1))


@dataclass(frozen=True)
class TriangleExponent:
    """Comparison baseline for ``-ln P(tau <= p^3 - t)``."""

    rate_constant: float
    coefficient: float
    exponent: float
    lower_coefficient: float | None
    lower_exponent: float | None


def triangle_exponent(p: float, t: float, n: int) -> TriangleExponent:
    """Leading-order exponent ``(L/2) t^(2/3) n^2`` with ``L`` for ``q = 1 - p``.

    For ``p <= 1/2`` the lower-bound coefficient ``1 / (2 p (1 - p))`` is also
    returned.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    if t < 0:
        raise ValueError("t must be non-negative")
    if n < 3:
        raise ValueError("n must be at least 3")
    L = rate_constant(centered_bernoulli(1.0 - p)).L
    scale = t ** (2.0 / 3.0) * n * n
    lower = 1.0 / (2 * p * (1 - p)) if p <= 0.5 else None
    return TriangleExponent(
        rate_constant=L,
        coefficient=L / 2,
        exponent=L / 2 * scale,
        lower_coefficient=lower,
        lower_exponent=None if lower is None else lower * scale,
    )
