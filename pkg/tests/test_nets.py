import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from trideficit.dist import centered_bernoulli, finite_support, rate_constant
from trideficit.nets import (
    MatrixNet,
    NetTooLargeError,
    dump_matrices,
    euclidean_net,
    exact_linear_tail,
    explicit_net,
    hoeffding_rate,
    hoeffding_tail_bound,
    load_matrices,
    nearest_distance,
    net_supremum,
    psd_net_bound,
    random_unit_targets,
    rank_k_net,
    threshold_upper_bound,
    union_upper_bound,
    verify_euclidean_cover,
    verify_matrix_cover,
)
from trideficit.spectral import psd_supremum, rank_supremum


def random_symmetric(rng, n):
    X = rng.normal(size=(n, n))
    return (X + X.T) / 2


@pytest.fixture(scope="module")
def net_4_03():
    return rank_k_net(4, 1, 0.3)


class TestEuclideanNet:
    def test_interval(self):
        pts = euclidean_net(1, 0.5).ravel()
        grid = np.linspace(-1, 1, 100001)
        assert np.max(np.min(np.abs(grid[:, None] - pts[None, :]), axis=1)) <= 0.5

    def test_single_point_at_eps_one(self):
        assert np.array_equal(euclidean_net(1, 1.0), np.zeros((1, 1)))

    @pytest.mark.parametrize("d", range(1, 7))
    def test_certificate(self, d):
        pts = euclidean_net(d, 0.5)
        assert np.all(np.linalg.norm(pts, axis=1) <= 1 + 1e-12)
        assert verify_euclidean_cover(pts, 0.5, n_draws=10_000, seed=d).passed

    @given(st.integers(1, 4), st.floats(0.3, 0.95), st.integers(0, 1000))
    def test_certificate_property(self, d, eps, seed):
        cert = verify_euclidean_cover(euclidean_net(d, eps), eps, n_draws=2000, seed=seed)
        assert cert.max_distance <= eps

    def test_guard(self):
        with pytest.raises(NetTooLargeError):
            euclidean_net(12, 0.1)

    def test_workers_do_not_change_result(self):
        pts = euclidean_net(3, 0.4)
        a = verify_euclidean_cover(pts, 0.4, n_draws=5000, seed=3, chunk=1000)
        b = verify_euclidean_cover(pts, 0.4, n_draws=5000, seed=3, chunk=1000, workers=4)
        assert a == b


class TestMatrixNet:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("flavor", ["rank_k", "psd_rank_k"])
    def test_certificate(self, n, flavor):
        net = rank_k_net(n, 1, 0.5, flavor)
        assert verify_matrix_cover(net, n_draws=10_000, seed=n).passed

    @pytest.mark.parametrize("flavor", ["rank_k", "psd_rank_k"])
    def test_element_invariants(self, flavor):
        net = rank_k_net(3, 2, 0.8, flavor)
        rng = np.random.default_rng(0)
        E = net.element_batch(rng.integers(0, net.size, 3000))
        assert np.all(np.linalg.norm(E, axis=(1, 2)) <= 1 + 1e-8)
        assert all(np.linalg.matrix_rank(M, tol=1e-8) <= 2 for M in E)
        if flavor == "psd_rank_k":
            assert np.min(np.linalg.eigvalsh(E)) >= -1e-8

    def test_rank_two_cover(self):
        net = rank_k_net(2, 2, 0.7)
        assert verify_matrix_cover(net, n_draws=2000, seed=1).passed

    def test_certificate_is_upper_bound(self):
        net = rank_k_net(2, 1, 0.5)
        T = random_unit_targets(2, 1, "rank_k", 300, np.random.default_rng(4))
        assert np.all(nearest_distance(net, T) >= nearest_distance(net, T, exact=True) - 1e-12)

    def test_zero_net_fails(self):
        net = explicit_net(np.zeros((1, 2, 2)), eps=0.9)
        cert = verify_matrix_cover(net, n_draws=1000, seed=0)
        assert not cert.passed
        assert cert.max_distance == pytest.approx(1.0, abs=1e-12)

    def test_guard_on_factors(self):
        with pytest.raises(NetTooLargeError):
            rank_k_net(4, 3, 0.3)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            rank_k_net(2, 3, 0.5)
        with pytest.raises(ValueError):
            rank_k_net(2, 1, 1.5)


class TestNetSupremum:
    def test_zero_matrix(self, net_4_03):
        assert net_supremum(np.zeros((4, 4)), net_4_03) == 0

    def test_triangle(self):
        A = np.ones((3, 3)) - np.eye(3)
        net = rank_k_net(3, 1, 0.25)
        assert 2.0 <= net_supremum(A, net) / (1 - 2 * 0.25)

    def test_rejects_coarse_net(self):
        with pytest.raises(ValueError):
            net_supremum(np.eye(2), rank_k_net(2, 1, 0.5))

    def test_approximation_inequality(self, net_4_03):
        rng = np.random.default_rng(10)
        for _ in range(100):
            A = random_symmetric(rng, 4)
            s = net_supremum(A, net_4_03)
            assert rank_supremum(A, 1) <= s / (1 - 2 * 0.3)
            assert s <= rank_supremum(A, 1) + 1e-12

    def test_psd_variant(self):
        rng = np.random.default_rng(11)
        psd = rank_k_net(4, 1, 0.3, "psd_rank_k")
        full = rank_k_net(4, 1, 0.3)
        for _ in range(30):
            A = random_symmetric(rng, 4)
            assert psd_supremum(A, 1) <= psd_net_bound(A, psd, full) + 1e-12

    @pytest.mark.parametrize("n, k, eps", [(3, 1, 0.3), (3, 1, 0.45), (2, 1, 0.2)])
    def test_matches_enumeration(self, n, k, eps):
        net = rank_k_net(n, k, eps)
        E = net.elements(10**7)
        rng = np.random.default_rng(n)
        for i in range(20):
            A = rng.normal(size=(n, n))
            if i % 2:
                A = (A + A.T) / 2
            assert net_supremum(A, net) == pytest.approx(np.einsum("ij,nij->n", A, E).max(), abs=1e-12)

    @given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 2))
    def test_pruning_with_rescaled_factors(self, seed, n, k):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(60, n, k)) * 0.8
        net = MatrixNet(n=n, k=k, eps=0.3, flavor="rank_k", factors=X)
        A = rng.normal(size=(n, n))
        expected = np.einsum("ij,nij->n", A, net.elements()).max()
        assert net_supremum(A, net) == pytest.approx(expected, abs=1e-12)


def tail_cases():
    rng = np.random.default_rng(8)
    for q in (0.3, 0.5, 0.7):
        for m in (1, 2, 5, 12, 20):
            for trial in range(3):
                a = rng.normal(size=m) if trial else np.ones(m)
                a *= math.sqrt(0.5) / np.linalg.norm(a)
                yield q, a


class TestHoeffding:
    def test_half_example(self):
        assert hoeffding_tail_bound(centered_bernoulli(0.5), 3.0) == pytest.approx(-9.0, rel=1e-10)

    def test_small_t(self):
        assert hoeffding_tail_bound(centered_bernoulli(0.3), 1e-8) == pytest.approx(0.0, abs=1e-12)

    def test_rejects_nonpositive_t(self):
        with pytest.raises(ValueError):
            hoeffding_tail_bound(centered_bernoulli(0.3), 0.0)

    def test_single_pair(self):
        tail = exact_linear_tail(centered_bernoulli(0.5), [1 / math.sqrt(2)], 1.2)
        assert tail <= math.exp(-1.44)

    def test_equal_weights_match_binomial(self):
        q, m, t = 0.3, 15, 0.7
        a = math.sqrt(0.5 / m)
        # 2 a (B - m q) > t with B ~ Bin(m, q)
        expected = stats.binom.sf(math.floor(m * q + t / (2 * a) + 1e-12), m, q)
        assert exact_linear_tail(centered_bernoulli(q), [a] * m, t) == pytest.approx(expected, rel=1e-12)

    def test_domination(self):
        ts = np.linspace(0.05, 4.0, 80)
        for q, a in tail_cases():
            d = centered_bernoulli(q)
            bound = np.exp(-ts * ts * rate_constant(d).L / 2)
            for w in (a, -a):
                assert np.all(exact_linear_tail(d, w, ts) <= bound * (1 + 1e-12))

    def test_tail_grid_matches_pointwise(self):
        d = centered_bernoulli(0.3)
        w = [0.3, -0.2, 0.5]
        sums, probs = _enumerate(d, w)
        for t in np.linspace(-2, 2, 41):
            assert exact_linear_tail(d, w, t) == pytest.approx(probs[sums > t].sum(), abs=1e-15)

    def test_positive_only_rate_fails_for_left_skew(self):
        # q = 0.75 has a long left tail; a negative weight turns it into a right tail
        d = centered_bernoulli(0.75)
        t = 1.05
        tail = exact_linear_tail(d, [-1 / math.sqrt(2)], t)
        assert tail == pytest.approx(0.25)
        assert tail > math.exp(hoeffding_tail_bound(d, t, positive_only=True))
        assert tail <= math.exp(hoeffding_tail_bound(d, t))

    def test_inhomogeneous_uses_smallest_rate(self):
        laws = [centered_bernoulli(0.5), centered_bernoulli(0.1), finite_support([(-1, 0.5), (1, 0.5)])]
        assert hoeffding_rate(laws) == pytest.approx(min(rate_constant(d).L for d in laws))
        assert hoeffding_rate(laws) == pytest.approx(0.5, rel=1e-8)

    def test_inhomogeneous_domination(self):
        laws = [centered_bernoulli(0.2), centered_bernoulli(0.6)]
        L = hoeffding_rate(laws)
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.normal(size=10)
            a *= math.sqrt(0.5) / np.linalg.norm(a)
            for t in np.linspace(0.1, 3.0, 15):
                # weights split across two laws: the tail of an independent sum is the
                # convolution of the two enumerations
                s1, p1 = _enumerate(laws[0], a[:5])
                s2, p2 = _enumerate(laws[1], a[5:])
                tot = (s1[:, None] + s2[None, :]).ravel()
                pr = (p1[:, None] * p2[None, :]).ravel()
                assert pr[tot > t].sum() <= math.exp(-t * t * L / 2) * (1 + 1e-12)


def _enumerate(d, weights):
    sums, probs = np.zeros(1), np.ones(1)
    for a in weights:
        sums = (sums[:, None] + 2 * a * np.asarray(d.values)[None, :]).ravel()
        probs = (probs[:, None] * np.asarray(d.probs)[None, :]).ravel()
    return sums, probs


class TestUnionBound:
    half = centered_bernoulli(0.5)

    def test_example(self):
        val = union_upper_bound(self.half, 30, 1, 60.0)
        assert val == pytest.approx(-3600 + 30 * math.log(240), rel=1e-10)

    def test_doubling_quadruples_leading_term(self):
        a = union_upper_bound(self.half, 30, 1, 60.0, C=0.0)
        b = union_upper_bound(self.half, 30, 1, 120.0, C=0.0)
        assert b == pytest.approx(4 * a, rel=1e-12)

    def test_monotone_and_correction_vanishes(self):
        ts = np.linspace(8.0, 400.0, 60)
        vals = [union_upper_bound(self.half, 30, 1, t) for t in ts]
        assert np.all(np.diff(vals) < 0)
        rel = [(v + t * t) / (t * t) for v, t in zip(vals, ts)]
        assert all(r > 0 for r in rel)
        assert np.all(np.diff(rel) < 0)

    def test_hypothesis_violation(self):
        with pytest.raises(ValueError):
            union_upper_bound(self.half, 30, 1, 5.0)

    def test_explicit_eps(self):
        val = union_upper_bound(self.half, 10, 1, 20.0, eps=0.1)
        assert val == pytest.approx(-(0.8**2) * 400 + 10 * math.log(10), rel=1e-12)
        with pytest.raises(ValueError):
            union_upper_bound(self.half, 10, 1, 20.0, eps=0.5)

    def test_threshold_relative_error(self):
        n = 200
        scaled = []
        for K in (5.0, 10.0, 20.0, 40.0, 80.0):
            t = math.sqrt(4 * K * n)
            lead = -t * t * 2 / 2
            rel = threshold_upper_bound(self.half, n, t, K) / lead - 1
            assert -1 < rel < 0
            scaled.append(abs(rel) * K / math.log(K))
        assert max(scaled) / min(scaled) < 2.0

    def test_threshold_log_n(self):
        n = 400
        K = math.log(n)
        t = math.sqrt(3 * K * n)
        rel = abs(threshold_upper_bound(self.half, n, t, K) / (-t * t) - 1)
        assert rel <= 2 * math.log(K) / K


class TestDump:
    def test_round_trip(self):
        mats = rank_k_net(2, 1, 0.5).elements()
        buf = io.StringIO()
        dump_matrices(mats, buf)
        buf.seek(0)
        assert np.array_equal(load_matrices(buf), mats)

    def test_digits(self):
        buf = io.StringIO()
        dump_matrices(np.array([[1 / 3]]), buf)
        line = buf.getvalue().splitlines()[1]
        mantissa = line.split("e")[0].replace(".", "").lstrip("-")
        assert len(mantissa) == 17
