"""Rare-event estimation for the lower tail of the triangle density.

The event is ``tau(A) <= E tau - t`` where ``tau`` is the triangle count over
``C(n, 3)``. Two estimators are provided: plain rejection, and importance
sampling with a planted block whose pairs have their edge probability shifted
(the change of measure behind the lower-bound construction). Weights are exact
likelihood ratios, so the tilted estimator is unbiased for both G(n, p) and
G(n, m).

Also here: exact Cramér-limit checks, hypergeometric against binomial log-pmf
gaps, and spectral diagnostics of graphs conditioned on a large deficit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from multiprocessing.pool import ThreadPool
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .dist import EdgeDistribution, centered_bernoulli, legendre, rate_constant, triangle_exponent
from .graphs import pair_index, replica_rng, sample_gnm_batch, sample_gnp_batch, trace_cubed_batch
from .spectral import BulkStatConfig

__all__ = [
    "CHUNK",
    "TAIL_CSV_FIELDS",
    "GraphModel",
    "PlantedConfig",
    "TailEstimate",
    "CramerResult",
    "StructureReport",
    "planted_matrix",
    "deficits",
    "deficit_quantile",
    "naive_tail_estimate",
    "tilted_draws",
    "tilted_tail_estimate",
    "cramer_check",
    "exact_log_tail",
    "hypergeo_binom_gap",
    "loglog_slope",
    "typical_threshold_K",
    "conditional_structure_report",
]

CHUNK = 1024

TAIL_CSV_FIELDS = (
    "model",
    "n",
    "m_or_p",
    "t",
    "estimator",
    "log_prob",
    "stderr",
    "ess",
    "theoretical_exponent",
    "seed",
)


@dataclass(frozen=True)
class GraphModel:
    """G(n, p) or G(n, m) on ``n`` nodes."""

    kind: str
    n: int
    p: float | None = None
    m: int | None = None

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError("need n >= 3")
        if self.kind == "gnp":
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ValueError("gnp needs p in (0, 1)")
        elif self.kind == "gnm":
            if self.m is None or not 0 < self.m < self.pairs:
                raise ValueError(f"gnm needs 0 < m < {self.pairs}")
        else:
            raise ValueError(f"unknown model {self.kind!r}")

    @classmethod
    def gnp(cls, n: int, p: float) -> "GraphModel":
        return cls("gnp", n, p=float(p))

    @classmethod
    def gnm(cls, n: int, m: int) -> "GraphModel":
        return cls("gnm", n, m=int(m))

    @property
    def pairs(self) -> int:
        return comb(self.n, 2)

    @property
    def edge_prob(self) -> float:
        return self.p if self.kind == "gnp" else self.m / self.pairs

    @property
    def param(self) -> float:
        """``p`` for G(n, p), ``m`` for G(n, m)."""
        return self.p if self.kind == "gnp" else self.m

    @property
    def expected_density(self) -> float:
        """Exact ``E tau``: ``p^3``, or ``(m)_3 / (N)_3`` for G(n, m)."""
        if self.kind == "gnp":
            return self.p**3
        N, m = self.pairs, self.m
        return float(Fraction(m * (m - 1) * (m - 2), N * (N - 1) * (N - 2)))

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gnp":
            return sample_gnp_batch(self.n, self.p, size, rng)
        return sample_gnm_batch(self.n, self.m, size, rng)


def deficits(model: GraphModel, adj: np.ndarray) -> np.ndarray:
    """``E tau - tau`` for a stack of adjacency matrices."""
    n = model.n
    tau = trace_cubed_batch(adj) / (n * (n - 1) * (n - 2))
    return model.expected_density - tau


def _chunks(n_samples: int) -> list[tuple[int, int]]:
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    return [(c, min(CHUNK, n_samples - c * CHUNK)) for c in range(-(-n_samples // CHUNK))]


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPool(workers) as pool:
        return pool.map(fn, items)


# ---------------------------------------------------------------- planting


def _ceil(x: float) -> int:
    # guards ceil(20.000000000000004) against rounding noise
    return math.ceil(x - 1e-12 * max(1.0, abs(x)))


# pair labels
UNTOUCHED, SHIFTED, CROSS, OUTSIDE = 0, 1, 2, 3


@dataclass(frozen=True)
class PlantedConfig:
    """Planted structure used as the change of measure.

    ``shift`` is the mean of a centered entry on pairs where the plant's
    vector has equal signs; the tilted edge probability there is ``p + shift``.

    For ``kind="block"`` there is one block per weight and block ``i`` has
    ``ell_i = ceil(1 + w_i sqrt(T) / (|w| |shift|))`` nodes, where
    ``T = t^(2/3) n^2``. With ``compensate=True`` (one block only) the
    block-to-rest pairs and the remaining pairs are moved so that every
    expected degree stays ``p (n - 1)``.

    For ``kind="split"`` the plant is the two-sided vector
    ``(+1, ..., +1, -1, ..., -1)/sqrt(n)`` with a fraction ``split`` of plus
    signs, and cross pairs move by ``-shift``.
    """

    n: int
    p: float
    t: float
    shift: float
    weights: tuple[float, ...] = (1.0,)
    ell: tuple[int, ...] | None = None
    kind: str = "block"
    split: float = 0.5
    compensate: bool = False

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("need n >= 2")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.kind == "split":
            if not 0.0 < self.split < 1.0:
                raise ValueError("split must lie in (0, 1)")
            if self.compensate:
                raise ValueError("split plants already keep degrees balanced")
        elif self.kind == "block":
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")
            ell = self._block_sizes() if self.ell is None else self.ell
            ell = tuple(int(x) for x in ell)
            object.__setattr__(self, "ell", ell)
            if any(x < 1 for x in ell):
                raise ValueError("block sizes must be positive")
            if sum(ell) > self.n:
                raise ValueError(f"blocks of total size {sum(ell)} exceed n={self.n}")
            if self.compensate and (len(ell) != 1 or ell[0] > self.n - 2):
                raise ValueError("compensation needs a single block leaving at least 2 nodes")
        else:
            raise ValueError(f"unknown plant kind {self.kind!r}")
        for label, prob in self.group_probs().items():
            if not 0.0 < prob < 1.0:
                raise ValueError(f"tilted edge probability {prob} outside (0, 1)")

    def _block_sizes(self) -> tuple[int, ...]:
        if not self.weights:
            return ()
        root = math.sqrt(self.target)
        if root == 0.0:
            return tuple(1 for _ in self.weights)
        if self.shift == 0.0:
            raise ValueError("a zero shift needs explicit block sizes")
        norm = math.sqrt(sum(w * w for w in self.weights))
        return tuple(_ceil(1 + w * root / (norm * abs(self.shift))) for w in self.weights)

    @classmethod
    def from_rate(
        cls, n: int, p: float, t: float, weights: tuple[float, ...] = (1.0,), floor: float = 0.25
    ) -> "PlantedConfig":
        """Block plant with shift ``-max(|s*|, floor)``, the lower-tail direction.

        ``s* = 1 - 2p`` is the minimiser of the rate ratio for the entry law;
        the floor keeps blocks finite near ``p = 1/2``.
        """
        s_star = rate_constant(centered_bernoulli(p)).s_star
        return cls(n=n, p=p, t=t, shift=-max(abs(s_star), floor), weights=weights)

    @classmethod
    def calibrated(
        cls,
        model: GraphModel,
        t: float,
        floor: float = 0.25,
        max_shift: float = 0.9,
        kl_budget: float | None = None,
    ) -> "PlantedConfig":
        """One block whose shift makes the plant's expected deficit equal ``t``.

        The block size starts from the :meth:`from_rate` rule, capped at ``n``
        (G(n, p)) or ``n // 2`` (G(n, m), where the plant is degree
        compensated), and shrinks only if no admissible shift reaches ``t``.
        The shift is then capped so that the plant's divergence from the base
        model stays within ``kl_budget`` nats. By default there is no cap for
        G(n, p), where the deficit is driven by the edge count and the plant
        tracks it, and a 2-nat cap for G(n, m), where at small ``n`` a block
        barely moves the deficit and stronger plants only degrade the
        weights. Expected deficits and divergences treat pairs as independent.
        """
        if kl_budget is None:
            kl_budget = 2.0 if model.kind == "gnm" else math.inf
        n, p = model.n, model.edge_prob
        comp = model.kind == "gnm"
        if t == 0:
            return cls(n=n, p=p, t=0.0, shift=0.0, ell=(1,), compensate=comp)
        s = max(abs(1.0 - 2.0 * p), floor)
        root = math.sqrt(t ** (2.0 / 3.0) * n * n)
        cap = n // 2 if comp else n
        best = None
        for ell in range(min(cap, _ceil(1 + root / s)), 1, -1):
            hi = _max_shift(n, p, ell, comp, max_shift)
            gap = _plant_expected_deficit(model, ell, -hi, comp) - t
            if gap >= 0:
                f = lambda x: _plant_expected_deficit(model, ell, -x, comp) - t
                best = (gap, ell, brentq(f, 0.0, hi, xtol=1e-12))
                break
            if best is None or gap > best[0]:
                best = (gap, ell, hi)
        _, ell, shift = best
        kl = lambda x: _plant_divergence(n, p, ell, -x, comp) - kl_budget
        if kl(shift) > 0:
            shift = brentq(kl, 0.0, shift, xtol=1e-12)
        return cls(n=n, p=p, t=t, shift=-shift, ell=(ell,), compensate=comp)

    @property
    def target(self) -> float:
        """Eigenvalue-scale target ``T = t^(2/3) n^2``."""
        return self.t ** (2.0 / 3.0) * self.n**2

    @property
    def tilted_edge_prob(self) -> float:
        return self.p + self.shift

    @property
    def v(self) -> np.ndarray:
        """Planted vector: ``|shift|^(1/2) T^(-1/4)`` on the first block, or the split vector."""
        v = np.zeros(self.n)
        if self.kind == "split":
            k = self.n_plus
            v[:k] = 1.0
            v[k:] = -1.0
            return v / math.sqrt(self.n)
        if self.ell and self.target > 0:
            v[: self.ell[0]] = math.sqrt(abs(self.shift)) * self.target ** -0.25
        return v

    @property
    def n_plus(self) -> int:
        return min(self.n - 1, max(1, round(self.split * self.n)))

    def group_probs(self) -> dict[int, float]:
        """Tilted edge probability of each pair label that occurs."""
        p, s = self.p, self.shift
        if self.kind == "split":
            return {SHIFTED: p + s, CROSS: p - s}
        out = {UNTOUCHED: p, SHIFTED: p + s}
        if self.compensate:
            cross, outside = _compensated(self.n, p, self.ell[0], s)
            out.update({CROSS: cross, OUTSIDE: outside})
        return out

    def pair_labels(self) -> np.ndarray:
        """Label of each pair in the row-major order of :func:`pair_index`."""
        rows, cols = pair_index(self.n)
        if self.kind == "split":
            k = self.n_plus
            return np.where((rows < k) == (cols < k), SHIFTED, CROSS).astype(np.int8)
        block = np.full(self.n, -1)
        start = 0
        for i, size in enumerate(self.ell):
            block[start : start + size] = i
            start += size
        br, bc = block[rows], block[cols]
        labels = np.where((br == bc) & (br >= 0), SHIFTED, UNTOUCHED)
        if self.compensate:
            labels = np.where(labels == SHIFTED, SHIFTED, np.where((br >= 0) | (bc >= 0), CROSS, OUTSIDE))
        return labels.astype(np.int8)

    def pair_probs(self) -> np.ndarray:
        labels = self.pair_labels()
        probs = np.empty(len(labels))
        for label, prob in self.group_probs().items():
            probs[labels == label] = prob
        return probs


def _compensated(n: int, p: float, ell: int, shift: float) -> tuple[float, float]:
    """Cross and outside probabilities keeping expected degrees at ``p (n - 1)``."""
    cross = p - (ell - 1) * shift / (n - ell)
    outside = p - ell * (cross - p) / (n - ell - 1)
    return cross, outside


def _max_shift(n: int, p: float, ell: int, comp: bool, frac: float) -> float:
    """Largest shift magnitude keeping every tilted probability a margin ``1 - frac`` inside (0, 1)."""
    hi = frac * p
    if comp:
        # cross pairs rise by (ell-1)x/(n-ell), outside pairs fall by ell(ell-1)x/((n-ell)(n-ell-1))
        hi = min(hi, frac * (1 - p) * (n - ell) / (ell - 1))
        hi = min(hi, frac * p * (n - ell) * (n - ell - 1) / (ell * (ell - 1)))
    return hi


def _plant_expected_deficit(model: GraphModel, ell: int, shift: float, comp: bool) -> float:
    n, p = model.n, model.edge_prob
    a = p + shift
    r = comb(ell, 2)
    if comp:
        c, b = _compensated(n, p, ell, shift)
    elif model.kind == "gnp":
        c = b = p
    else:
        c = b = (p * model.pairs - r * a) / (model.pairs - r)
    k3, k2, k1, k0 = comb(ell, 3), comb(ell, 2) * (n - ell), ell * comb(n - ell, 2), comb(n - ell, 3)
    dens = lambda a, c, b: (k3 * a**3 + k2 * a * c * c + k1 * c * c * b + k0 * b**3) / comb(n, 3)
    return dens(p, p, p) - dens(a, c, b)


def _bern_kl(a: float, p: float) -> float:
    return a * math.log(a / p) + (1 - a) * math.log((1 - a) / (1 - p))


def _plant_divergence(n: int, p: float, ell: int, shift: float, comp: bool) -> float:
    """KL divergence of the independent-pair plant from G(n, p)."""
    r = comb(ell, 2)
    out = r * _bern_kl(p + shift, p)
    if comp:
        c, b = _compensated(n, p, ell, shift)
        out += ell * (n - ell) * _bern_kl(c, p) + comb(n - ell, 2) * _bern_kl(b, p)
    return out


def planted_matrix(cfg: PlantedConfig, diagonal: bool = False) -> np.ndarray:
    """Block-diagonal matrix with constant ``shift`` entries.

    With a zero diagonal (the default) a block of size ``ell`` has eigenvalues
    ``shift (ell - 1)`` once and ``-shift`` with multiplicity ``ell - 1``, so
    its top singular value is ``|shift| (ell - 1)``. With ``diagonal=True`` the
    blocks are full, the matrix has rank ``k`` and singular values
    ``|shift| ell``. The diagonal does not affect ``<A, M>`` for a graph.
    For split plants this returns ``shift * n * v v^T``.
    """
    n = cfg.n
    if cfg.kind == "split":
        v = cfg.v * math.sqrt(n)
        M = cfg.shift * np.outer(v, v)
    else:
        M = np.zeros((n, n))
        start = 0
        for size in cfg.ell:
            M[start : start + size, start : start + size] = cfg.shift
            start += size
    if not diagonal:
        np.fill_diagonal(M, 0.0)
    return M


# ---------------------------------------------------------------- estimators


@dataclass(frozen=True)
class TailEstimate:
    """Estimate of ``ln P(tau <= E tau - t)``.

    ``theoretical_exponent`` is the leading-order log-probability
    ``-(L/2) t^(2/3) n^2``. ``stderr`` is the delta-method standard error of
    ``log_prob``.
    """

    model: str
    n: int
    m_or_p: float
    t: float
    estimator: str
    log_prob: float
    stderr: float
    n_samples: int
    hits: int
    effective_sample_size: float
    theoretical_exponent: float
    seed: int
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")
        if self.effective_sample_size > self.n_samples * (1 + 1e-12):
            raise ValueError("effective sample size exceeds the sample count")

    def csv_row(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "m_or_p": self.m_or_p,
            "t": self.t,
            "estimator": self.estimator,
            "log_prob": self.log_prob,
            "stderr": self.stderr,
            "ess": self.effective_sample_size,
            "theoretical_exponent": self.theoretical_exponent,
            "seed": self.seed,
        }


def _check_t(model: GraphModel, t: float) -> None:
    if t < 0:
        raise ValueError("t must be non-negative")
    if t >= model.expected_density:
        raise ValueError(f"t={t} must be below E tau = {model.expected_density}")


def _summarise(model: GraphModel, t: float, estimator: str, log_y: np.ndarray, seed: int) -> TailEstimate:
    """Delta-method summary of weighted hits ``y = w * 1{hit}`` given in log space."""
    N = len(log_y)
    hits = int(np.sum(np.isfinite(log_y)))
    # Kish size of the weighted hits, the terms the estimate averages
    ess = float(math.exp(2 * logsumexp(log_y) - logsumexp(2 * log_y))) if hits else 0.0
    theory = -triangle_exponent(model.edge_prob, t, model.n).exponent
    common = dict(
        model=model.kind,
        n=model.n,
        m_or_p=model.param,
        t=t,
        estimator=estimator,
        n_samples=N,
        hits=hits,
        effective_sample_size=min(ess, float(N)),
        theoretical_exponent=theory,
        seed=seed,
    )
    if hits == 0:
        return TailEstimate(log_prob=-math.inf, stderr=math.inf, degenerate=True, **common)
    top = float(np.max(log_y))
    y = np.exp(log_y - top)
    mean = float(np.mean(y))
    sd = float(np.std(y, ddof=1)) if N > 1 else 0.0
    return TailEstimate(
        log_prob=top + math.log(mean), stderr=sd / (math.sqrt(N) * mean), degenerate=False, **common
    )


def naive_tail_estimate(model: GraphModel, t: float, n_samples: int, seed: int, workers: int = 1) -> TailEstimate:
    """Rejection estimate ``ln(hits / n_samples)``; degenerate when nothing hits."""
    _check_t(model, t)

    def run(chunk):
        idx, size = chunk
        d = deficits(model, model.sample(size, replica_rng(seed, idx)))
        return d >= t

    hit = np.concatenate(_map(run, _chunks(n_samples), workers))
    log_y = np.where(hit, 0.0, -np.inf)
    return _summarise(model, t, "naive", log_y, seed)


def _gnp_log_weights(p: float, present: np.ndarray, labels: np.ndarray, groups: dict[int, float]) -> np.ndarray:
    out = np.zeros(present.shape[0])
    for label, a in groups.items():
        mask = labels == label
        r = int(mask.sum())
        if r == 0 or a == p:
            continue
        X = present[:, mask].sum(axis=1)
        out += X * math.log(p / a) + (r - X) * math.log((1 - p) / (1 - a))
    return out


def _rank_select(counts: np.ndarray, width: int, rng: np.random.Generator) -> np.ndarray:
    """Row ``i`` marks a uniform subset of size ``counts[i]`` of ``range(width)``."""
    keys = rng.random((len(counts), width))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return ranks < counts[:, None]


def _count_table(sizes: Sequence[int], m: int, log_odds: Sequence[float], max_cells: int = 5 * 10**6):
    """Joint law of per-group edge counts when ``m`` edges are placed with
    Fisher noncentral weights ``exp(log_odds[g])`` per pair.

    Returns the feasible count vectors (one per row) and their log-pmf. Zero
    log-odds give the central (uniform G(n, m)) law.
    """
    sizes = [int(r) for r in sizes]
    free = [np.arange(r + 1) for r in sizes[:-1]]
    if np.prod([len(f) for f in free], dtype=float) > max_cells:
        raise ValueError("too many count vectors to tabulate")
    grids = np.meshgrid(*free, indexing="ij") if free else []
    cols = [g.ravel() for g in grids]
    head = np.sum(cols, axis=0) if cols else np.zeros(1, dtype=np.int64)
    last = m - head
    ok = (last >= 0) & (last <= sizes[-1])
    cells = np.column_stack([c[ok] for c in cols] + [last[ok]]).astype(np.int64)
    r = np.asarray(sizes)
    logc = gammaln(r + 1) - gammaln(cells + 1) - gammaln(r - cells + 1)
    logw = (logc + cells * np.asarray(log_odds, dtype=float)).sum(axis=1)
    return cells, logw - logsumexp(logw)


class _GnmProposal:
    """Tilted G(n, m): group counts from the noncentral table, uniform placement within groups."""

    def __init__(self, model: GraphModel, cfg: PlantedConfig):
        self.model = model
        labels = cfg.pair_labels()
        p = model.edge_prob
        logit = lambda x: math.log(x / (1 - x))
        groups = [g for g in sorted(cfg.group_probs()) if np.any(labels == g)]
        self.masks = [labels == g for g in groups]
        sizes = [int(mk.sum()) for mk in self.masks]
        odds = [logit(cfg.group_probs()[g]) - logit(p) for g in groups]
        self.cells, log_prop = _count_table(sizes, model.m, odds)
        if all(o == 0.0 for o in odds):
            self.log_ratio = np.zeros(len(self.cells))
        else:
            _, log_target = _count_table(sizes, model.m, [0.0] * len(sizes))
            self.log_ratio = log_target - log_prop
        self.prob = np.exp(log_prop)
        self.prob /= self.prob.sum()
        self.sizes = sizes

    def sample(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        n = self.model.n
        pick = rng.choice(len(self.cells), size=size, p=self.prob)
        present = np.zeros((size, self.model.pairs), dtype=bool)
        for g, mask in enumerate(self.masks):
            present[:, mask] = _rank_select(self.cells[pick, g], self.sizes[g], rng)
        rows, cols = pair_index(n)
        adj = np.zeros((size, n, n), dtype=np.int8)
        adj[:, rows, cols] = present
        adj[:, cols, rows] = present
        return adj, self.log_ratio[pick]


def tilted_draws(
    model: GraphModel, cfg: PlantedConfig, n_samples: int, seed: int, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Deficits and log likelihood ratios of graphs drawn under the plant.

    G(n, p): each pair is drawn with its tilted probability from the same
    uniforms as the plain sampler, so a zero shift reproduces the plain
    graphs exactly. G(n, m): the number of edges in each pair group follows
    Fisher's noncentral law with the plant's odds ratios and edges are placed
    uniformly within groups; the weight is the exact ratio of the central and
    noncentral count laws.
    """
    if cfg.n != model.n:
        raise ValueError("plant and model disagree on n")
    if not math.isclose(cfg.p, model.edge_prob, rel_tol=1e-12):
        raise ValueError("plant and model disagree on the edge probability")
    p = model.edge_prob
    labels, groups = cfg.pair_labels(), cfg.group_probs()
    probs = cfg.pair_probs()
    proposal = _GnmProposal(model, cfg) if model.kind == "gnm" else None
    rows, cols = pair_index(model.n)

    def run(chunk):
        idx, size = chunk
        rng = replica_rng(seed, idx)
        if proposal is None:
            adj = sample_gnp_batch(model.n, probs, size, rng)
            log_w = _gnp_log_weights(p, adj[:, rows, cols].astype(bool), labels, groups)
        else:
            adj, log_w = proposal.sample(size, rng)
        return deficits(model, adj), log_w

    parts = _map(run, _chunks(n_samples), workers)
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])


def tilted_tail_estimate(
    model: GraphModel, t: float, cfg: PlantedConfig, n_samples: int, seed: int, workers: int = 1
) -> TailEstimate:
    """Importance-sampling estimate under the planted change of measure (see :func:`tilted_draws`)."""
    _check_t(model, t)
    d, log_w = tilted_draws(model, cfg, n_samples, seed, workers)
    return _summarise(model, t, "tilted", np.where(d >= t, log_w, -np.inf), seed)


def deficit_quantile(model: GraphModel, level: float, n_samples: int, seed: int, workers: int = 1) -> float:
    """``t`` with ``P(deficit >= t)`` close to ``level``, from a pilot run."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")

    def run(chunk):
        idx, size = chunk
        return deficits(model, model.sample(size, replica_rng(seed, idx)))

    d = np.concatenate(_map(run, _chunks(n_samples), workers))
    return float(np.quantile(d, 1.0 - level, method="higher"))


# ---------------------------------------------------------------- Cramér


@dataclass(frozen=True)
class CramerResult:
    m: int
    s: float
    empirical: float
    limit: float

    @property
    def gap(self) -> float:
        return abs(self.empirical - self.limit)


def exact_log_tail(dist: EdgeDistribution, m: int, s: float, max_outcomes: int = 10**7) -> float:
    """``ln P(xi_1 + ... + xi_m > m s)`` computed exactly.

    Two-point laws reduce to a binomial tail with an exact rational
    threshold. Larger supports enumerate the multinomial counts.
    """
    if m < 1:
        raise ValueError("m must be positive")
    vals, probs = dist.values, dist.probs
    if len(vals) == 1:
        return 0.0 if vals[0] > s else -math.inf
    if len(vals) == 2:
        lo, hi = sorted(zip(vals, probs))
        # sum = m lo + (hi - lo) X with X ~ Bin(m, P(hi))
        thr = (Fraction(m) * (Fraction(s) - Fraction(lo[0]))) / (Fraction(hi[0]) - Fraction(lo[0]))
        k = math.floor(thr)
        if k < 0:
            return 0.0
        if k >= m:
            return -math.inf
        # summed in log space: sf underflows long before m = 10^4
        return float(logsumexp(binom.logpmf(np.arange(k + 1, m + 1), m, hi[1])))
    k = len(vals)
    if comb(m + k - 1, k - 1) > max_outcomes:
        raise ValueError("too many outcomes to enumerate")
    counts = _compositions(m, k)
    sums = counts @ np.asarray(vals, dtype=float)
    logp = gammaln(m + 1) - gammaln(counts + 1).sum(axis=1) + counts @ np.log(np.asarray(probs, dtype=float))
    keep = sums > m * s
    return float(logsumexp(logp[keep])) if np.any(keep) else -math.inf


def _compositions(m: int, k: int) -> np.ndarray:
    """All non-negative integer vectors of length ``k`` summing to ``m``."""
    if k == 1:
        return np.array([[m]], dtype=np.int64)
    parts = []
    for first in range(m + 1):
        rest = _compositions(m - first, k - 1)
        parts.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(parts)


def cramer_check(dist: EdgeDistribution, m: int, s: float) -> CramerResult:
    """``(1/m) ln P(sum > m s)`` against its Cramér limit ``-Lambda*(s)``."""
    lo, hi = dist.support
    if not lo < s < hi:
        raise ValueError(f"s={s} must lie inside the support hull ({lo}, {hi})")
    emp = exact_log_tail(dist, m, s) / m
    return CramerResult(m=m, s=s, empirical=emp, limit=-legendre(dist, s))


# ---------------------------------------------------------------- hypergeometric vs binomial


def hypergeo_binom_gap(N_pop: int, K_succ: int, r_trials: int, s_value: int) -> float:
    """``|ln P(H = s) - ln P(B = s)|`` for ``H ~ Hyp(N, K, r)`` and ``B ~ Bin(r, K/N)``.

    The ratio of the pmfs is a product of ``(1 - i/K)``, ``(1 - j/(N-K))`` and
    ``1/(1 - k/N)`` factors, summed with ``log1p``; at ``r = 1`` every factor is 1.
    """
    N, K, r, s = N_pop, K_succ, r_trials, s_value
    if not 0 < K < N or not 1 <= r <= N:
        raise ValueError("need 0 < K < N and 1 <= r <= N")
    if not 0 <= s <= r or s > K or r - s > N - K:
        raise ValueError(f"zero probability at s={s}")
    i, j, k = np.arange(s), np.arange(r - s), np.arange(r)
    log_ratio = np.log1p(-i / K).sum() + np.log1p(-j / (N - K)).sum() - np.log1p(-k / N).sum()
    return abs(float(log_ratio))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``ln y`` against ``ln x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------- conditional structure


@dataclass(frozen=True)
class StructureReport:
    """Per-graph shares over accepted samples, each normalised by ``deficit * n^3``.

    Shares are oriented so that a negative cubic contribution counts as a
    positive share of the deficit.
    """

    n: int
    t: float
    K: float
    n_samples: int
    accepted: int
    lambda_min_share: np.ndarray = field(repr=False)
    lambda_second_share: np.ndarray = field(repr=False)
    degree_share: np.ndarray = field(repr=False)
    extreme_share: np.ndarray = field(repr=False)
    bulk_share: np.ndarray = field(repr=False)

    SHARES = ("lambda_min_share", "lambda_second_share", "degree_share", "extreme_share", "bulk_share")

    @property
    def degenerate(self) -> bool:
        return self.accepted == 0

    def summary(self) -> dict[str, tuple[float, float, float]]:
        """``(q25, median, q75)`` for each share."""
        out = {}
        for name in self.SHARES:
            x = getattr(self, name)
            out[name] = tuple(float(v) for v in np.quantile(x, [0.25, 0.5, 0.75])) if len(x) else (math.nan,) * 3
        return out


def _centered_stack(model: GraphModel, adj: np.ndarray) -> np.ndarray:
    A = adj.astype(float) - model.edge_prob
    idx = np.arange(model.n)
    A[:, idx, idx] = 0.0
    return A


def typical_threshold_K(model: GraphModel, seed: int, size: int = CHUNK) -> float:
    """``K`` putting ``-sqrt(K n)`` at the median smallest centered eigenvalue
    of ``size`` unconditioned graphs (drawn from the seed's first chunk)."""
    adj = model.sample(size, replica_rng(seed, 0))
    lam_min = np.linalg.eigvalsh(_centered_stack(model, adj))[:, 0]
    return float(np.median(lam_min) ** 2 / model.n)


def conditional_structure_report(
    model: GraphModel, t: float, n_samples: int, seed: int, K: float | None = None, workers: int = 1
) -> StructureReport:
    """Spectral and degree shares of the deficit for graphs with deficit at least ``t``.

    Graphs are drawn by rejection. Eigenvalues below ``-sqrt(K n)`` count as
    extreme; by default ``K`` comes from :func:`typical_threshold_K`, so
    "extreme" means beyond where an unconditioned smallest eigenvalue
    typically sits. Accepted graphs with zero deficit (possible only at
    ``t = 0``) count as accepted but carry no shares.
    """
    _check_t(model, t)
    n, p = model.n, model.edge_prob
    if K is None:
        K = typical_threshold_K(model, seed)
    cfg = BulkStatConfig(K=K, n=n)
    mean_degree = p * (n - 1)

    def run(chunk):
        idx, size = chunk
        adj = model.sample(size, replica_rng(seed, idx))
        d = deficits(model, adj)
        keep = d >= t
        adj, d = adj[keep], d[keep]
        if len(d) == 0:
            return 0, np.zeros((0, 5))
        lam = np.linalg.eigvalsh(_centered_stack(model, adj))
        deg = adj.sum(axis=2)
        cubes = lam**3
        extreme = np.where(lam < cfg.threshold, cubes, 0.0).sum(axis=1)
        bulk = cubes.sum(axis=1) - extreme
        rows = np.column_stack(
            [-cubes[:, 0], -cubes[:, 1], ((deg - mean_degree) ** 2).sum(axis=1), -extreme, -bulk]
        )
        pos = d > 0
        return len(d), rows[pos] / (d[pos, None] * n**3)

    parts = _map(run, _chunks(n_samples), workers)
    accepted = sum(a for a, _ in parts)
    table = np.vstack([b for _, b in parts])
    return StructureReport(
        n=n,
        t=t,
        K=K,
        n_samples=n_samples,
        accepted=accepted,
        **{name: table[:, i] for i, name in enumerate(StructureReport.SHARES)},
    )
