"""Random graphs G(n, m) and G(n, p), triangle statistics and centering.

Graphs are immutable. Samplers take an explicit seed (or a numpy
``Generator``) and are pure given it. Exact checks use
:class:`fractions.Fraction`; only spectra use floating point.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb
from typing import Iterable, TextIO

import numpy as np

__all__ = [
    "Graph",
    "CenteredMatrix",
    "TriangleStats",
    "replica_rng",
    "pair_index",
    "sample_gnm",
    "sample_gnp",
    "sample_gnm_batch",
    "sample_gnp_batch",
    "triangle_stats",
    "trace_cubed_batch",
    "center",
    "centering_identity_rhs",
    "centering_identity_residual",
    "centering_inequality_holds",
    "degree_square_sum",
    "write_edgelist",
    "read_edgelist",
]


def replica_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Stream for replica ``index`` of an experiment seeded with ``seed``.

    Streams come from ``SeedSequence([seed, index])``, so results do not depend
    on how replicas are scheduled across workers.
    """
    if seed is None:
        raise ValueError("a seed is required")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return replica_rng(seed, 0)


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on nodes ``0..n-1``.

    ``edges`` holds sorted pairs ``(u, v)`` with ``u < v``, in lexicographic
    order.
    """

    n: int
    edges: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError("n must be non-negative")
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < v < self.n):
                raise ValueError(f"invalid edge ({u}, {v}) for n={self.n}")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        return cls(n, tuple((min(u, v), max(u, v)) for u, v in edges))

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "Graph":
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(adj, adj.T) or np.any(np.diag(adj) != 0):
            raise ValueError("adjacency must be symmetric with zero diagonal")
        rows, cols = np.nonzero(np.triu(adj, 1))
        return cls(adj.shape[0], tuple(zip(rows.tolist(), cols.tolist())))

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        if self.edges:
            e = np.asarray(self.edges)
            a[e[:, 0], e[:, 1]] = 1
            a[e[:, 1], e[:, 0]] = 1
        a.setflags(write=False)
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = self.adjacency.sum(axis=1)
        d.setflags(write=False)
        return d


@dataclass(frozen=True)
class CenteredMatrix:
    """``A - p*J + p*I`` for a graph's adjacency ``A`` (``J`` all ones)."""

    n: int
    matrix: np.ndarray
    p: float


@dataclass(frozen=True)
class TriangleStats:
    count: int
    density: float
    trace_cubed: int


def pair_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of each of the ``C(n, 2)`` pairs, row-major."""
    return np.triu_indices(n, 1)


def _partial_fisher_yates(N: int, m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """First ``m`` entries of ``size`` independent uniform permutations of ``range(N)``."""
    perm = np.tile(np.arange(N, dtype=np.int64), (size, 1))
    rows = np.arange(size)
    for i in range(m):
        j = i + rng.integers(0, N - i, size=size)
        tmp = perm[rows, i].copy()
        perm[rows, i] = perm[rows, j]
        perm[rows, j] = tmp
    return perm[:, :m]


def _check_gnm(n: int, m: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    N = comb(n, 2)
    if not 0 <= m <= N:
        raise ValueError(f"m={m} outside [0, {N}] for n={n}")
    return N


def sample_gnm_batch(n: int, m: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` uniform G(n, m) adjacency matrices, shape ``(size, n, n)``."""
    N = _check_gnm(n, m)
    idx = _partial_fisher_yates(N, m, size, rng)
    rows, cols = pair_index(n)
    adj = np.zeros((size, n, n), dtype=np.int8)
    b = np.repeat(np.arange(size), m)
    r, c = rows[idx.ravel()], cols[idx.ravel()]
    adj[b, r, c] = 1
    adj[b, c, r] = 1
    return adj


def sample_gnm(n: int, m: int, seed: int | np.random.Generator) -> Graph:
    """Uniform graph on ``n`` nodes with exactly ``m`` edges."""
    return Graph.from_adjacency(sample_gnm_batch(n, m, 1, _as_rng(seed))[0])


def sample_gnp_batch(n: int, p: float | np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` G(n, p) adjacency matrices.

    ``p`` may be a scalar or an array of per-pair probabilities in the
    row-major pair order of :func:`pair_index`. Pair ``k`` is present when its
    uniform draw falls below ``p[k]``, so equal probabilities reproduce the
    same graphs from the same stream.
    """
    N = comb(n, 2)
    probs = np.broadcast_to(np.asarray(p, dtype=float), (N,))
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    u = rng.random((size, N))
    present = u < probs
    rows, cols = pair_index(n)
    adj = np.zeros((size, n, n), dtype=np.int8)
    adj[:, rows, cols] = present
    adj[:, cols, rows] = present
    return adj


def sample_gnp(n: int, p: float, seed: int | np.random.Generator) -> Graph:
    """Graph with each pair present independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    return Graph.from_adjacency(sample_gnp_batch(n, p, 1, _as_rng(seed))[0])


def trace_cubed_batch(adj: np.ndarray) -> np.ndarray:
    """``tr(A^3)`` for a stack of 0/1 adjacency matrices, as int64."""
    a = np.asarray(adj, dtype=np.float64)
    sq = a @ a
    tr = np.einsum("...ij,...ji->...", sq, a)
    return np.rint(tr).astype(np.int64)


def triangle_stats(G: Graph) -> TriangleStats:
    """Triangle count, density ``count / C(n, 3)`` and ``tr(A^3)``."""
    if G.n < 3:
        raise ValueError("triangle statistics need n >= 3")
    a = G.adjacency
    tr = int(np.einsum("ij,ji->", a @ a, a))
    count = tr // 6
    return TriangleStats(count=count, density=count / comb(G.n, 3), trace_cubed=tr)


def center(G: Graph, p: float) -> CenteredMatrix:
    """Centered adjacency ``A - p*J + p*I``."""
    n = G.n
    mat = G.adjacency.astype(float) - p
    np.fill_diagonal(mat, 0.0)
    return CenteredMatrix(n=n, matrix=mat, p=float(p))


def degree_square_sum(G: Graph) -> int:
    d = G.degrees
    return int(d @ d)


def _exact_trace_cubed_scaled(G: Graph, p: Fraction) -> Fraction:
    """``tr((A - pJ + pI)^3)`` exactly, via the integer matrix ``den * (A - pJ + pI)``."""
    a, b = p.numerator, p.denominator
    n = G.n
    bound = max(abs(b - a), abs(a), 1)
    if n**3 * bound**3 < 2**62:
        B = b * G.adjacency - a
        np.fill_diagonal(B, 0)
    else:
        B = np.array(G.adjacency, dtype=object) * b - a
        for i in range(n):
            B[i, i] = 0
    tr = (B @ B * B.T).sum()
    return Fraction(int(tr), b**3)


def centering_identity_rhs(G: Graph, p: Fraction) -> Fraction:
    """Closed form of ``tr((A - pJ + pI)^3)`` in terms of ``tr(A^3)``, ``m`` and degrees."""
    p = Fraction(p)
    n, m = G.n, G.m
    tr_a3 = int(np.einsum("ij,ji->", G.adjacency @ G.adjacency, G.adjacency)) if n else 0
    return (
        tr_a3
        - p**3 * n**3
        + p**3 * n
        + 6 * m * p * (n * p - 2 * p + 1)
        + 3 * p**3 * n * (n - 1)
        - 3 * p * degree_square_sum(G)
    )


def centering_identity_residual(G: Graph, p: Fraction | int | str) -> Fraction:
    """Exact ``lhs - rhs`` of the centering identity; zero for every graph and ``p``."""
    p = Fraction(p)
    return _exact_trace_cubed_scaled(G, p) - centering_identity_rhs(G, p)


def centering_inequality_holds(G: Graph) -> bool:
    """Check ``tr((A - pJ + pI)^3) <= tr(A^3) - p^3 n^3 + p^3 n + 6 m p`` at ``p = m / C(n, 2)``."""
    n, m = G.n, G.m
    if n < 2:
        raise ValueError("need n >= 2")
    p = Fraction(m, comb(n, 2))
    lhs = _exact_trace_cubed_scaled(G, p)
    tr_a3 = int(np.einsum("ij,ji->", G.adjacency @ G.adjacency, G.adjacency))
    return lhs <= tr_a3 - p**3 * n**3 + p**3 * n + 6 * m * p


def write_edgelist(G: Graph, fh: TextIO) -> None:
    """Header ``"n m"`` then one ``"u v"`` line per edge, 0-indexed."""
    fh.write(f"{G.n} {G.m}\n")
    for u, v in G.edges:
        fh.write(f"{u} {v}\n")


def read_edgelist(fh: TextIO | str) -> Graph:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    header = fh.readline().split()
    if len(header) != 2:
        raise ValueError("edge list must start with 'n m'")
    n, m = int(header[0]), int(header[1])
    edges = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ValueError(f"bad edge line: {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if len(edges) != m:
        raise ValueError(f"header announces {m} edges, found {len(edges)}")
    return Graph.from_edges(n, edges)
