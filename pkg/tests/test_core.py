import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from concordance.core import (
    ConcordanceError,
    KernelSpec,
    PairedSample,
    RciParams,
    UndefinedStatisticError,
    associate,
    ci_fast,
    ci_naive,
    kci,
    pair_census,
    pearson,
    rci_fast,
    rci_naive,
    spearman,
)


def brute_counts(x, y, dx=0.0, dy=0.0):
    """Pair-by-pair loop, independent of the vectorized masks."""
    conc = disc = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        if x[j] > x[i] + dx:
            sx = 1
        elif x[i] > x[j] + dx:
            sx = -1
        else:
            continue
        if y[j] > y[i] + dy:
            sy = 1
        elif y[i] > y[j] + dy:
            sy = -1
        else:
            continue
        if sx == sy:
            conc += 1
        else:
            disc += 1
    return conc, disc


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestPairedSample:
    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ConcordanceError, match="differ in length"):
            PairedSample([1, 2, 3], [1, 2])

    def test_rejects_nan(self):
        with pytest.raises(ConcordanceError):
            PairedSample([1, np.nan], [1, 2])

    def test_rejects_single_observation(self):
        with pytest.raises(ConcordanceError):
            PairedSample([1.0], [2.0])

    def test_is_read_only(self):
        s = PairedSample([1, 2], [3, 4])
        with pytest.raises(ValueError):
            s.x[0] = 5.0

    def test_negative_delta_rejected(self):
        with pytest.raises(ConcordanceError):
            RciParams(-0.1, 0.0)


class TestConcordanceIndex:
    def test_hand_example(self):
        # pairs: (0,1) conc, (0,2) conc, (1,2) disc
        s = PairedSample([1, 2, 3], [1, 3, 2])
        assert ci_naive(s).estimate == pytest.approx(2 / 3)
        assert ci_fast(s).estimate == pytest.approx(2 / 3)

    def test_perfect_orderings(self):
        x = np.arange(10.0)
        assert ci_fast(PairedSample(x, x)).estimate == 1.0
        assert ci_fast(PairedSample(x, -x)).estimate == 0.0

    def test_ties_strict_vs_exclude(self):
        s = PairedSample([1, 1, 2, 3], [1, 2, 3, 4])
        # 6 pairs, one tied in x, five concordant
        assert ci_fast(s, "strict").estimate == pytest.approx(5 / 6)
        assert ci_fast(s, "exclude").estimate == pytest.approx(1.0)
        assert ci_naive(s, "exclude").estimate == pytest.approx(1.0)

    def test_all_tied_exclude_undefined(self):
        s = PairedSample([1, 1, 1], [1, 2, 3])
        with pytest.raises(UndefinedStatisticError):
            ci_fast(s, "exclude")

    def test_relation_to_kendall_tau_b_without_ties(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(2, 60))
        tau = stats.kendalltau(x, y).statistic
        assert ci_fast(PairedSample(x, y)).estimate == pytest.approx((tau + 1) / 2, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=40))
    def test_fast_matches_naive_with_heavy_ties(self, pts):
        x, y = np.array(pts, dtype=float).T
        s = PairedSample(x, y)
        assert ci_fast(s).estimate == ci_naive(s).estimate
        c, _ = brute_counts(x, y)
        assert ci_naive(s).estimate == pytest.approx(c / math.comb(len(x), 2))


class TestRobustConcordanceIndex:
    def test_hand_example(self):
        x = [0.0, 1.0, 2.0, 3.0]
        y = [0.0, 2.0, 1.0, 3.0]
        # at delta 0.5 every pair is valid and only (1, 2) is discordant
        s = PairedSample(x, y)
        res = rci_naive(s, RciParams(0.5, 0.5))
        assert res.estimate == pytest.approx(5 / 6)
        res = rci_naive(s, RciParams(1.5, 1.5))
        # only pair (0,3) has both differences above 1.5
        assert res.estimate == 1.0
        assert res.effective_pairs == 1

    def test_zero_delta_equals_ci_without_ties(self):
        rng = np.random.default_rng(2)
        s = PairedSample(*rng.normal(size=(2, 50)))
        assert rci_fast(s, RciParams()).estimate == pytest.approx(ci_fast(s).estimate, abs=1e-15)

    def test_margin_is_exclusive(self):
        # differences exactly equal to delta are not valid
        s = PairedSample([0.0, 1.0], [0.0, 1.0])
        with pytest.raises(UndefinedStatisticError):
            rci_fast(s, RciParams(1.0, 0.0))
        assert rci_fast(s, RciParams(0.5, 0.5)).estimate == 1.0

    def test_no_valid_pairs_raises(self):
        s = PairedSample([0, 0.1, 0.2], [0, 0.1, 0.2])
        with pytest.raises(UndefinedStatisticError, match="no valid pairs"):
            rci_naive(s, RciParams(1, 1))

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(finite, finite), min_size=2, max_size=40),
           st.floats(0, 50), st.floats(0, 50))
    def test_fast_matches_brute(self, pts, dx, dy):
        x, y = np.array(pts, dtype=float).T
        s = PairedSample(x, y)
        c, d = brute_counts(x, y, dx, dy)
        if c + d == 0:
            with pytest.raises(UndefinedStatisticError):
                rci_fast(s, RciParams(dx, dy))
        else:
            assert rci_fast(s, RciParams(dx, dy)).estimate == c / (c + d)
            assert rci_naive(s, RciParams(dx, dy)).estimate == c / (c + d)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(3)
        s = PairedSample(rng.normal(size=40), rng.normal(size=40) * 3)
        p = RciParams(0.3, 1.0)
        assert rci_fast(s, p).estimate == rci_fast(s.swapped(), p.swapped()).estimate


class TestKernelizedCI:
    def test_unit_kernel_is_ci(self):
        rng = np.random.default_rng(4)
        s = PairedSample(*rng.normal(size=(2, 30)))
        assert kci(s, KernelSpec.unit()).estimate == pytest.approx(ci_naive(s).estimate, abs=1e-12)

    def test_heavyside_kernel_is_rci(self):
        rng = np.random.default_rng(5)
        s = PairedSample(*rng.normal(size=(2, 30)))
        k = KernelSpec.heavyside(0.4, 0.7)
        assert kci(s, k).estimate == pytest.approx(rci_naive(s, RciParams(0.4, 0.7)).estimate, abs=1e-12)

    def test_logistic_weights(self):
        k = KernelSpec.logistic(-10.0, 0.5)
        assert k.weight(0.5) == pytest.approx(0.5)
        w = k.weight(np.linspace(0, 2, 50))
        assert np.all(np.diff(w) > 0)

    def test_positive_slope_rejected(self):
        with pytest.raises(ConcordanceError):
            KernelSpec.logistic(1.0, 0.0)

    def test_hand_weighted_value(self):
        s = PairedSample([0.0, 1.0, 3.0], [0.0, 2.0, 1.0])
        k = KernelSpec.logistic(-1.0, 1.0)
        f = lambda d: 1 / (1 + math.exp(-(d - 1)))  # noqa: E731
        w01 = f(1) * f(2)
        w02 = f(3) * f(1)
        w12 = f(2) * f(1)
        expected = (w01 + w02) / (w01 + w02 + w12)
        assert kci(s, k).estimate == pytest.approx(expected, rel=1e-14)


class TestCorrelations:
    def test_pearson_matches_scipy(self):
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=(2, 80))
        assert pearson(PairedSample(x, y)).estimate == pytest.approx(stats.pearsonr(x, y).statistic, abs=1e-14)

    def test_spearman_matches_scipy_with_ties(self):
        x = np.array([1, 2, 2, 3, 4, 4, 4, 5], float)
        y = np.array([2, 1, 3, 3, 5, 4, 6, 7], float)
        assert spearman(PairedSample(x, y)).estimate == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-14)

    def test_constant_vector_is_degenerate(self):
        with pytest.raises(ConcordanceError):
            pearson(PairedSample([1, 1, 1], [1, 2, 3]))


class TestPairCensus:
    def test_counts_sum_to_pairs(self):
        s = PairedSample([0, 0, 1, 2, 5], [1, 2, 2, 0, 9])
        c = pair_census(s, RciParams(0.5, 0.5))
        assert sum(c) == 10
        # x tie at (0, 1), y tie at (1, 2)
        assert c.tied == 2

    def test_dispatch(self):
        s = PairedSample([1, 2, 3], [1, 3, 2])
        assert associate(s, "ci").estimate == pytest.approx(2 / 3)
        with pytest.raises(ConcordanceError):
            associate(s, "kci")
        with pytest.raises(ConcordanceError):
            associate(s, "tau")
