"""Finite nets of balls and low-rank matrix sets, and the tail bounds they feed.

Euclidean nets are cubic lattices: spacing ``2 eps / sqrt(d)`` gives every
point of space a lattice point within ``eps``. Points whose cell misses the
ball are dropped and the rest are projected onto the ball, which cannot
increase any distance to a point of the ball.

Matrix nets store only their factor net. A rank-k element is ``X Y^T``
(or ``X X^T`` for the PSD flavor) scaled back into the unit Frobenius ball.
Factors live in the Frobenius ball of radius ``k**0.25``, the largest norm of
the balanced factors of a unit-Frobenius rank-k matrix.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence, TextIO

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln

from trideficit.dist import EdgeDistribution, rate_constant
from trideficit.graphs import replica_rng

__all__ = [
    "DEFAULT_SIZE_GUARD",
    "NetTooLargeError",
    "MatrixNet",
    "CoveringCertificate",
    "euclidean_net",
    "predicted_lattice_size",
    "rank_k_net",
    "explicit_net",
    "random_unit_targets",
    "verify_euclidean_cover",
    "verify_matrix_cover",
    "nearest_distance",
    "net_supremum",
    "psd_net_bound",
    "hoeffding_rate",
    "hoeffding_tail_bound",
    "exact_linear_tail",
    "linear_sum_law",
    "union_upper_bound",
    "threshold_upper_bound",
    "dump_matrices",
    "load_matrices",
]

DEFAULT_SIZE_GUARD = 10**6
_CHUNK = 2048
# keeps the lattice cover radius strictly below eps after rounding
_SPACING_SHRINK = 1.0 - 1e-9

Flavor = Literal["rank_k", "psd_rank_k"]


class NetTooLargeError(ValueError):
    """Raised when a net would exceed the configured size guard."""


def _unit_ball_log_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - gammaln(d / 2 + 1)


def _lattice_spacing(d: int, eps: float) -> float:
    return 2.0 * eps * _SPACING_SHRINK / math.sqrt(d)


def predicted_lattice_size(d: int, eps: float, radius: float = 1.0) -> float:
    """Upper bound on the number of lattice points :func:`euclidean_net` keeps."""
    h = _lattice_spacing(d, eps)
    per_axis = 2 * math.floor(radius / h + 0.5) + 1
    cube = per_axis**d
    log_vol = _unit_ball_log_volume(d) + d * math.log(radius + h * math.sqrt(d) / 2) - d * math.log(h)
    return float(min(cube, math.exp(min(log_vol, 700.0))))


def euclidean_net(
    d: int, eps: float, radius: float = 1.0, max_points: int = DEFAULT_SIZE_GUARD
) -> np.ndarray:
    """Points covering the closed ball of ``radius`` in ``R^d`` to within ``eps``.

    Returns an array of shape ``(N, d)``. ``eps >= radius`` collapses to the
    origin.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps >= radius:
        return np.zeros((1, d))
    predicted = predicted_lattice_size(d, eps, radius)
    if predicted > max_points:
        raise NetTooLargeError(f"net would hold about {predicted:.3g} points, guard is {max_points}")
    h = _lattice_spacing(d, eps)
    J = math.floor(radius / h + 0.5)
    coords = h * np.arange(-J, J + 1)
    # squared distance from the origin to each cell along one axis
    gap = np.maximum(np.abs(coords) - h / 2, 0.0) ** 2
    pts = np.zeros((1, 0))
    dist2 = np.zeros(1)
    for _ in range(d):
        new_d2 = (dist2[:, None] + gap[None, :]).ravel()
        keep = new_d2 < radius * radius
        pts = np.hstack([np.repeat(pts, len(coords), axis=0), np.tile(coords, len(dist2))[:, None]])[keep]
        dist2 = new_d2[keep]
    norms = np.linalg.norm(pts, axis=1)
    outside = norms > radius
    pts[outside] *= (radius / norms[outside])[:, None]
    return pts


@dataclass(frozen=True)
class MatrixNet:
    """A finite eps-net of the rank-k (or PSD rank-k) unit Frobenius ball.

    Factor nets keep ``factors`` of shape ``(F, n, k)``; the rank-k flavor has
    ``F**2`` elements indexed ``i * F + j`` for ``X_i Y_j^T``. Explicit nets
    keep their elements directly.
    """

    n: int
    k: int
    eps: float
    flavor: Flavor
    factors: np.ndarray | None = field(default=None, repr=False)
    explicit: np.ndarray | None = field(default=None, repr=False)
    factor_eps: float | None = None
    factor_radius: float | None = None

    @property
    def factor_count(self) -> int:
        return 0 if self.factors is None else len(self.factors)

    @property
    def size(self) -> int:
        if self.explicit is not None:
            return len(self.explicit)
        F = self.factor_count
        return F * F if self.flavor == "rank_k" else F

    def element_batch(self, idx: np.ndarray) -> np.ndarray:
        """Elements at flat indices ``idx`` as an array ``(len(idx), n, n)``."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.explicit is not None:
            return self.explicit[idx]
        F = self.factor_count
        if self.flavor == "rank_k":
            X, Y = self.factors[idx // F], self.factors[idx % F]
        else:
            X = Y = self.factors[idx]
        M = X @ np.swapaxes(Y, 1, 2)
        norms = np.linalg.norm(M, axis=(1, 2))
        scale = np.minimum(1.0, 1.0 / np.maximum(norms, 1e-300))
        return M * scale[:, None, None]

    def iter_elements(self, chunk: int = _CHUNK) -> Iterator[np.ndarray]:
        for start in range(0, self.size, chunk):
            yield self.element_batch(np.arange(start, min(start + chunk, self.size)))

    def elements(self, max_elements: int = DEFAULT_SIZE_GUARD) -> np.ndarray:
        if self.size > max_elements:
            raise NetTooLargeError(f"{self.size} elements exceed the guard {max_elements}")
        return self.element_batch(np.arange(self.size))


def rank_k_net(
    n: int, k: int, eps: float, flavor: Flavor = "rank_k", max_factors: int = DEFAULT_SIZE_GUARD
) -> MatrixNet:
    """Factor-product eps-net of the rank-k (or PSD rank-k) unit Frobenius ball.

    The factor net is an ``eps / (2R)``-net of the ``n x k`` ball of radius
    ``R = k**0.25``. The guard applies to the number of stored factors.
    """
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if flavor not in ("rank_k", "psd_rank_k"):
        raise ValueError(f"unknown flavor {flavor!r}")
    R = k**0.25
    feps = eps / (2 * R)
    pts = euclidean_net(n * k, feps, radius=R, max_points=max_factors)
    return MatrixNet(
        n=n, k=k, eps=eps, flavor=flavor, factors=pts.reshape(-1, n, k), factor_eps=feps, factor_radius=R
    )


def explicit_net(elements: Sequence[np.ndarray] | np.ndarray, eps: float, flavor: Flavor = "rank_k") -> MatrixNet:
    E = np.asarray(elements, dtype=float)
    if E.ndim != 3 or E.shape[1] != E.shape[2]:
        raise ValueError("elements must have shape (N, n, n)")
    ranks = [np.linalg.matrix_rank(M, tol=1e-8) for M in E]
    return MatrixNet(n=E.shape[1], k=max(ranks, default=0), eps=eps, flavor=flavor, explicit=E)


@dataclass(frozen=True)
class CoveringCertificate:
    """Randomised covering check: ``max_distance`` over ``n_draws`` targets."""

    eps: float
    max_distance: float
    mean_distance: float
    n_draws: int

    @property
    def passed(self) -> bool:
        return self.max_distance <= self.eps


def _uniform_ball(d: int, size: int, rng: np.random.Generator, radius: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / d)
    return g * r[:, None]


def _chunked(n_draws: int, chunk: int) -> list[tuple[int, int]]:
    return [(i, min(chunk, n_draws - i * chunk)) for i in range((n_draws + chunk - 1) // chunk)]


def _reduce(per_chunk: list[tuple[float, float, int]], eps: float) -> CoveringCertificate:
    mx = max(c[0] for c in per_chunk)
    total = sum(c[1] for c in per_chunk)
    count = sum(c[2] for c in per_chunk)
    return CoveringCertificate(eps=eps, max_distance=mx, mean_distance=total / count, n_draws=count)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def verify_euclidean_cover(
    points: np.ndarray,
    eps: float,
    n_draws: int = 10_000,
    seed: int = 0,
    radius: float = 1.0,
    workers: int = 1,
    chunk: int = 4096,
) -> CoveringCertificate:
    """Distance from uniform ball points to their nearest net point.

    A tenth of the draws sit on the boundary sphere, where covering is
    hardest.
    """
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    tree = cKDTree(points)

    def run(job):
        idx, size = job
        rng = replica_rng(seed, idx)
        y = _uniform_ball(d, size, rng, radius)
        rim = max(1, size // 10)
        y[:rim] *= radius / np.maximum(np.linalg.norm(y[:rim], axis=1, keepdims=True), 1e-300)
        dist, _ = tree.query(y)
        return float(dist.max()), float(dist.sum()), size

    return _reduce(_map(run, _chunked(n_draws, chunk), workers), eps)


def random_unit_targets(n: int, k: int, flavor: Flavor, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit-Frobenius matrices of rank ``k`` (PSD for the PSD flavor)."""
    G = rng.normal(size=(size, n, k))
    if flavor == "psd_rank_k":
        T = G @ np.swapaxes(G, 1, 2)
    else:
        H = rng.normal(size=(size, n, k))
        T = G @ np.swapaxes(H, 1, 2)
    return T / np.linalg.norm(T, axis=(1, 2))[:, None, None]


def _balanced_factors(T: np.ndarray, k: int, psd: bool) -> tuple[np.ndarray, np.ndarray]:
    if psd:
        lam, U = np.linalg.eigh(T)
        lam, U = lam[..., ::-1][..., :k], U[..., ::-1][..., :k]
        A = U * np.sqrt(np.maximum(lam, 0.0))[:, None, :]
        return A, A
    U, s, Vt = np.linalg.svd(T)
    r = np.sqrt(s[..., :k])
    return U[..., :k] * r[:, None, :], np.swapaxes(Vt[:, :k, :], 1, 2) * r[:, None, :]


def _nearest_bruteforce(net: MatrixNet, T: np.ndarray) -> np.ndarray:
    best = np.full(len(T), np.inf)
    flatT = T.reshape(len(T), -1)
    for E in net.iter_elements():
        flatE = E.reshape(len(E), -1)
        d2 = (flatT**2).sum(1)[:, None] - 2 * flatT @ flatE.T + (flatE**2).sum(1)[None, :]
        best = np.minimum(best, d2.min(axis=1))
    return np.sqrt(np.maximum(best, 0.0))


def nearest_distance(net: MatrixNet, T: np.ndarray, exact: bool = False) -> np.ndarray:
    """Distance from each target in ``T`` to the net.

    Explicit nets, and any net with ``exact=True``, are searched exhaustively.
    Factor nets otherwise use the element built from the factors nearest to
    the balanced factors of the target, an upper bound on the true distance.
    """
    T = np.asarray(T, dtype=float)
    if exact or net.explicit is not None:
        return _nearest_bruteforce(net, T)
    psd = net.flavor == "psd_rank_k"
    A, B = _balanced_factors(T, net.k, psd)
    tree = cKDTree(net.factors.reshape(net.factor_count, -1))
    _, ia = tree.query(A.reshape(len(T), -1))
    if psd:
        idx = ia
    else:
        _, ib = tree.query(B.reshape(len(T), -1))
        idx = ia * net.factor_count + ib
    E = net.element_batch(idx)
    return np.linalg.norm(E - T, axis=(1, 2))


def verify_matrix_cover(
    net: MatrixNet, n_draws: int = 10_000, seed: int = 0, workers: int = 1, chunk: int = 2048
) -> CoveringCertificate:
    """Covering check over random unit-Frobenius rank-k targets of the net's flavor."""

    def run(job):
        idx, size = job
        T = random_unit_targets(net.n, max(net.k, 1), net.flavor, size, replica_rng(seed, idx))
        dist = nearest_distance(net, T)
        return float(dist.max()), float(dist.sum()), size

    return _reduce(_map(run, _chunked(n_draws, chunk), workers), net.eps)


def net_supremum(A: np.ndarray, net: MatrixNet, chunk: int = _CHUNK) -> float:
    """``max <A, N>`` over the net; the net's eps must be below 1/2."""
    if not net.eps < 0.5:
        raise ValueError("net_supremum needs eps < 1/2")
    A = np.asarray(A, dtype=float)
    if A.shape != (net.n, net.n):
        raise ValueError("matrix and net sizes differ")
    if net.explicit is not None:
        return float(np.max(np.einsum("ij,nij->n", A, net.explicit)))
    X = net.factors
    F, n, k = X.shape
    gram = np.einsum("fik,fil->fkl", X, X).reshape(F, k * k)
    if net.flavor == "psd_rank_k":
        vals = np.einsum("fik,fik->f", X, A @ X)
        norms = np.sqrt(np.einsum("fa,fa->f", gram, gram))
        return float(np.max(vals * np.minimum(1.0, 1.0 / np.maximum(norms, 1e-300))))
    P = X.reshape(F, n * k)
    Q = (A @ X).reshape(F, n * k)
    R = float(np.max(np.linalg.norm(P, axis=1)))
    # a positive value <A, c X Y^T> is at most R min(||A Y||, ||A^T X||), so
    # only factors whose bound beats an attained value can improve on it
    row_bound = R * np.linalg.norm(Q, axis=1)
    col_bound = R * np.linalg.norm((A.T @ X).reshape(F, n * k), axis=1)

    def block(rows, cols):
        vals = Q[rows] @ P[cols].T  # entry (r, c) is <A, X_c Y_r^T>
        norms = np.sqrt(np.maximum(gram[rows] @ gram[cols].T, 0.0))
        return float(np.max(vals * np.minimum(1.0, 1.0 / np.maximum(norms, 1e-300))))

    seed_rows = np.argsort(-row_bound, kind="stable")[:64]
    best = block(seed_rows, np.arange(F))
    rows = np.flatnonzero(row_bound > best)
    cols = np.flatnonzero(col_bound > best)
    if len(cols):
        for start in range(0, len(rows), chunk):
            best = max(best, block(rows[start : start + chunk], cols))
    return best


def psd_net_bound(A: np.ndarray, psd_net: MatrixNet, rank_net: MatrixNet) -> float:
    """Upper bound on the PSD rank-k supremum from a PSD net and a rank-k net."""
    eps = max(psd_net.eps, rank_net.eps)
    return net_supremum(A, psd_net) + 2 * eps / (1 - 2 * eps) * net_supremum(A, rank_net)


def hoeffding_rate(dist: EdgeDistribution | Sequence[EdgeDistribution], positive_only: bool = False) -> float:
    """Smallest rate constant over one or several entry laws.

    ``positive_only`` restricts the infimum to ``s > 0``. That variant does
    not bound tails of signed linear statistics when the law is skewed to
    the left.
    """
    laws = [dist] if isinstance(dist, EdgeDistribution) else list(dist)
    if not laws:
        raise ValueError("need at least one law")
    return min(rate_constant(d, positive_only=positive_only).L for d in laws)


def hoeffding_tail_bound(
    dist: EdgeDistribution | Sequence[EdgeDistribution], t: float, positive_only: bool = False
) -> float:
    """Log of the bound ``P(<A, M> > t) <= exp(-t^2 L / 2)`` for ``||M||_F <= 1``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return -0.5 * t * t * hoeffding_rate(dist, positive_only)


def linear_sum_law(dist: EdgeDistribution, weights: Sequence[float], max_outcomes: int = 1 << 22) -> tuple[np.ndarray, np.ndarray]:
    """Atoms and probabilities of ``2 sum_i a_i xi_i``, sorted by value.

    ``weights`` are the upper-diagonal entries of a symmetric ``M`` with
    zero diagonal, so the sum equals ``<A, M>``.
    """
    v = np.asarray(dist.values)
    p = np.asarray(dist.probs)
    total = len(v) ** len(weights)
    if total > max_outcomes:
        raise NetTooLargeError(f"{total} outcomes exceed {max_outcomes}")
    sums = np.zeros(1)
    probs = np.ones(1)
    for a in weights:
        sums = (sums[:, None] + 2 * a * v[None, :]).ravel()
        probs = (probs[:, None] * p[None, :]).ravel()
    order = np.argsort(sums, kind="stable")
    return sums[order], probs[order]


def exact_linear_tail(dist: EdgeDistribution, weights: Sequence[float], t: float | np.ndarray) -> float | np.ndarray:
    """``P(2 sum_i a_i xi_i > t)`` by full enumeration; ``t`` may be an array."""
    sums, probs = linear_sum_law(dist, weights)
    # tail[j] = P(S >= sums[j]); summed from the top for accuracy in the far tail
    tail = np.concatenate([np.cumsum(probs[::-1])[::-1], [0.0]])
    out = tail[np.searchsorted(sums, np.asarray(t, dtype=float), side="right")]
    return float(out) if np.ndim(t) == 0 else out


def _union_terms(L: float, n: int, k: int, t: float, C: float) -> float:
    x = t * t * L
    if not x > 2 * n * k:
        raise ValueError(f"need t^2 L > 2 n k, got {x:.6g} <= {2 * n * k}")
    return -x / 2 + C * n * k * math.log(x / (n * k))


def union_upper_bound(
    dist: EdgeDistribution | Sequence[EdgeDistribution],
    n: int,
    k: int,
    t: float,
    eps: float | None = None,
    C: float = 1.0,
) -> float:
    """Log upper bound for ``P(sqrt(sum_{i<=k} sigma_i^2) > t)``.

    With ``eps=None`` the net resolution is ``nk / (t^2 L)`` and the bound is
    ``-t^2 L/2 + C nk ln(t^2 L / (nk))``. An explicit ``eps`` in ``(0, 1/2)``
    gives ``-(1 - 2 eps)^2 t^2 L / 2 + C nk ln(1/eps)``. ``C`` stands in for
    the unspecified absolute constant.
    """
    if n < 1 or k < 1 or k > n:
        raise ValueError("need 1 <= k <= n")
    if not t > 0:
        raise ValueError("t must be positive")
    L = hoeffding_rate(dist)
    if eps is None:
        return _union_terms(L, n, k, t, C)
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    return -((1 - 2 * eps) ** 2) * t * t * L / 2 + C * n * k * math.log(1 / eps)


def threshold_upper_bound(
    dist: EdgeDistribution | Sequence[EdgeDistribution], n: int, t: float, K: float, C: float = 1.0
) -> float:
    """Log bound for singular values above ``sqrt(K n)``, via ``k = ceil(t^2 / (K n))``."""
    if not K > 0:
        raise ValueError("K must be positive")
    k = max(1, math.ceil(t * t / (K * n)))
    if k > n:
        raise ValueError("t too large for the threshold reduction")
    return union_upper_bound(dist, n, k, t, C=C)


def dump_matrices(mats: np.ndarray | Sequence[np.ndarray], fh: TextIO) -> None:
    """Row-major text dump with 17 significant digits per entry."""
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    fh.write(f"{mats.shape[0]} {mats.shape[1]} {mats.shape[2]}\n")
    for M in mats:
        for row in M:
            fh.write(" ".join(f"{x:.16e}" for x in row) + "\n")


def load_matrices(fh: TextIO) -> np.ndarray:
    count, rows, cols = (int(x) for x in fh.readline().split())
    data = np.array([float(x) for line in fh for x in line.split()])
    if data.size != count * rows * cols:
        raise ValueError("matrix dump is truncated")
    return data.reshape(count, rows, cols)
