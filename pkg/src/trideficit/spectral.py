"""Spectra of symmetric matrices and the eigenvalue statistics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "SYMMETRY_TOL",
    "SpectralSummary",
    "BulkStatConfig",
    "BulkExtremeSplit",
    "L3L2Result",
    "spectrum",
    "bulk_extreme_split",
    "f1",
    "f2",
    "capped_cubic_stat",
    "l3_l2_check",
    "frobenius_inner",
    "top_psd_optimizer",
    "top_rank_optimizer",
    "psd_supremum",
    "rank_supremum",
]

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class SpectralSummary:
    """Eigenvalues and singular values, both sorted non-increasing."""

    eigenvalues: np.ndarray
    singular_values: np.ndarray
    frobenius_sq: float

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def cubic_sum(self) -> float:
        return float(np.sum(self.eigenvalues**3))


@dataclass(frozen=True)
class BulkStatConfig:
    """Bulk eigenvalues are those at or above ``-sqrt(K n)``."""

    K: float
    n: int

    def __post_init__(self) -> None:
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def threshold(self) -> float:
        return -math.sqrt(self.K * self.n)


class BulkExtremeSplit(NamedTuple):
    bulk_cubic: float
    extreme_cubic: float


class L3L2Result(NamedTuple):
    holds_premise: bool
    holds_conclusion: bool


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.size and np.max(np.abs(M - M.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    return M


def spectrum(M: np.ndarray) -> SpectralSummary:
    M = _check_symmetric(M)
    eig = np.linalg.eigvalsh(M)[::-1].copy()
    sv = np.linalg.svd(M, compute_uv=False)
    return SpectralSummary(eigenvalues=eig, singular_values=sv, frobenius_sq=float(np.sum(M * M)))


def bulk_extreme_split(S: SpectralSummary, cfg: BulkStatConfig) -> BulkExtremeSplit:
    """Cubic sums of the eigenvalues above and below ``-sqrt(K n)``."""
    if cfg.n != S.n:
        raise ValueError(f"config is for n={cfg.n}, spectrum has {S.n} eigenvalues")
    lam = S.eigenvalues
    extreme = lam < cfg.threshold
    cubes = lam**3
    return BulkExtremeSplit(float(np.sum(cubes[~extreme])), float(np.sum(cubes[extreme])))


def f1(x: np.ndarray | float, K: float) -> np.ndarray:
    """Cube on ``[0, sqrt K)``, zero below, continued linearly with slope ``3K`` above."""
    x = np.asarray(x, dtype=float)
    r = math.sqrt(K)
    return np.where(x < 0, 0.0, np.where(x < r, x**3, 3 * K * x - 2 * K * r))


def f2(x: np.ndarray | float, K: float) -> np.ndarray:
    return -f1(-np.asarray(x, dtype=float), K)


def capped_cubic_stat(S: SpectralSummary, cfg: BulkStatConfig) -> float:
    """``(1/n) sum (f1 + f2)(lambda_i / sqrt n)``."""
    if cfg.n != S.n:
        raise ValueError(f"config is for n={cfg.n}, spectrum has {S.n} eigenvalues")
    x = S.eigenvalues / math.sqrt(cfg.n)
    return float(np.sum(f1(x, cfg.K) + f2(x, cfg.K)) / cfg.n)


def l3_l2_check(a: Sequence[float], eps: float, rtol: float = 1e-12) -> L3L2Result:
    """Premise and conclusion of the l3/l2 comparison for a non-increasing sequence.

    The conclusion is tested with relative tolerance ``rtol`` so that the
    equality case is not lost to rounding.
    """
    a = np.asarray(a, dtype=float)
    if not eps > 0:
        raise ValueError("eps must be positive")
    if a.ndim != 1 or a.size == 0:
        raise ValueError("need a non-empty sequence")
    if np.any(a < 0):
        raise ValueError("entries must be non-negative")
    if np.any(np.diff(a) > 0):
        raise ValueError("sequence must be non-increasing")
    cubes = a**3
    premise = bool(np.sum(cubes[1:]) >= eps * cubes[0])
    l2sq = float(np.sum(a * a))
    l3sq = float(np.sum(cubes)) ** (2.0 / 3.0)
    conclusion = l2sq >= (1 + eps) ** (1.0 / 3.0) * l3sq * (1 - rtol)
    return L3L2Result(premise, bool(conclusion))


def frobenius_inner(A: np.ndarray, M: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    if A.shape != M.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {M.shape}")
    return float(np.sum(A * M))


def top_psd_optimizer(A: np.ndarray, k: int) -> np.ndarray:
    """Unit-Frobenius PSD matrix of rank at most ``k`` maximising ``<A, M>``.

    Built from the top ``k`` eigenpairs, keeping only positive eigenvalues.
    Returns zero when ``A`` has no positive eigenvalue.
    """
    A = _check_symmetric(A)
    if not 1 <= k <= A.shape[0]:
        raise ValueError("need 1 <= k <= n")
    lam, U = np.linalg.eigh(A)
    lam, U = lam[::-1][:k], U[:, ::-1][:, :k]
    d = np.maximum(lam, 0.0)
    norm = math.sqrt(float(d @ d))
    if norm == 0.0:
        return np.zeros_like(A)
    return (U * (d / norm)) @ U.T


def top_rank_optimizer(A: np.ndarray, k: int) -> np.ndarray:
    """Unit-Frobenius matrix of rank at most ``k`` maximising ``<A, M>``."""
    A = np.asarray(A, dtype=float)
    if not 1 <= k <= min(A.shape):
        raise ValueError("need 1 <= k <= min(shape)")
    U, s, Vt = np.linalg.svd(A)
    s = s[:k]
    norm = math.sqrt(float(s @ s))
    if norm == 0.0:
        return np.zeros_like(A)
    return (U[:, :k] * (s / norm)) @ Vt[:k]


def psd_supremum(A: np.ndarray, k: int) -> float:
    """``sqrt(sum_{i<=k} max(0, lambda_i)^2)``."""
    lam = spectrum(A).eigenvalues[:k]
    d = np.maximum(lam, 0.0)
    return math.sqrt(float(d @ d))


def rank_supremum(A: np.ndarray, k: int) -> float:
    """``sqrt(sum_{i<=k} sigma_i^2)``."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)[:k]
    return math.sqrt(float(s @ s))
