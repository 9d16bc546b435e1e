import numpy as np
import pytest

from multigap import (
    SplitResultSummary,
    UndefinedCorrelationError,
    aggregate,
    mid_ranks,
    plcc,
    srocc,
)

from oracles import (
    midranks_bruteforce,
    pearson_bruteforce,
    spearman_bruteforce,
    spearman_shortcut_tiefree,
)


class TestPlcc:
    def test_identity(self):
        a = [1.0, 2.0, 5.0, 3.0]
        assert plcc(a, a) == 1.0

    def test_negation(self):
        a = np.array([1.0, 2.0, 5.0, 3.0])
        assert plcc(a, -a) == -1.0

    def test_hand_computed_value(self):
        # A=(1,2,3), B=(1,2,4): r = 3 / sqrt(2 * 42/9) = 0.9819805060619657
        r = plcc([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert r == pytest.approx(0.9819805060619657, abs=1e-15)

    def test_zero_variance_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            plcc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedCorrelationError):
            plcc([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])

    def test_symmetry_and_affine_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.normal(size=17)
            b = rng.normal(size=17)
            r = plcc(a, b)
            assert abs(r - plcc(b, a)) <= 1e-15
            assert abs(r - plcc(3.5 * a + 2.0, b)) <= 1e-12
            assert abs(r - plcc(a, 0.1 * b - 7.0)) <= 1e-12

    def test_length_and_size_validation(self):
        with pytest.raises(ValueError):
            plcc([1.0], [2.0])
        with pytest.raises(ValueError):
            plcc([1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            plcc([1.0, np.nan, 2.0], [1.0, 2.0, 3.0])


class TestMidRanks:
    def test_distinct(self):
        assert mid_ranks([10.0, 20.0, 30.0]).tolist() == [1.0, 2.0, 3.0]

    def test_tie_pair(self):
        assert mid_ranks([5.0, 5.0, 7.0]).tolist() == [1.5, 1.5, 3.0]

    def test_matches_bruteforce_with_duplicates(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.integers(0, 8, size=rng.integers(2, 60)).astype(float)
            np.testing.assert_array_equal(mid_ranks(v), midranks_bruteforce(v))


class TestSrocc:
    def test_monotone_invariance(self):
        a = np.array([0.3, 1.2, 2.0, 3.5, 9.0])
        assert srocc(a, np.exp(a)) == 1.0
        assert srocc(a, a**3) == 1.0

    def test_reversal(self):
        a = np.array([1.0, 2.0, 3.0, 4.0])
        assert srocc(a, a[::-1]) == -1.0

    def test_equals_plcc_of_midranks(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=40).round(1)
        b = rng.normal(size=40).round(1)
        assert srocc(a, b) == plcc(mid_ranks(a), mid_ranks(b))

    def test_shortcut_formula_tie_free(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            m = int(rng.integers(3, 200))
            a = rng.permutation(m).astype(float)
            b = rng.permutation(m).astype(float)
            assert srocc(a, b) == pytest.approx(
                spearman_shortcut_tiefree(a, b), abs=1e-12
            )

    def test_constant_ranks_raise(self):
        with pytest.raises(UndefinedCorrelationError):
            srocc([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


class TestAgainstBruteforce:
    def test_random_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            m = int(rng.integers(2, 120))
            a = rng.normal(size=m)
            b = rng.normal(size=m)
            if np.ptp(a) == 0 or np.ptp(b) == 0:
                continue
            assert plcc(a, b) == pytest.approx(pearson_bruteforce(a, b), abs=1e-12)
            assert srocc(a, b) == pytest.approx(spearman_bruteforce(a, b), abs=1e-12)


class TestAggregate:
    def test_single_split(self):
        s = aggregate([(0.9, 0.8)])
        assert s.plcc_mean == s.plcc_median == 0.9
        assert s.plcc_std == 0.0
        assert not s.std_defined

    def test_two_values(self):
        # mean 0.85, median 0.85, sample std sqrt(0.005) = 0.07071...
        s = aggregate([(0.8, 0.8), (0.9, 0.9)])
        assert s.plcc_mean == pytest.approx(0.85)
        assert s.plcc_median == pytest.approx(0.85)
        assert s.plcc_std == pytest.approx(0.07071067811865475, abs=1e-15)
        assert s.std_defined

    def test_identical_values(self):
        s = aggregate([(0.7, 0.6)] * 100)
        assert s.plcc_std == 0.0
        assert s.srocc_std == 0.0

    def test_median_even_count(self):
        s = aggregate([(0.1, 0.1), (0.2, 0.2), (0.6, 0.6), (0.9, 0.9)])
        assert s.plcc_median == pytest.approx(0.4)

    def test_recomputable_from_lists(self):
        rng = np.random.default_rng(17)
        pairs = [(float(p), float(q)) for p, q in rng.uniform(-1, 1, size=(9, 2))]
        s = aggregate(pairs)
        assert s.plcc_mean == pytest.approx(np.mean(s.plcc_values), abs=1e-15)
        assert s.srocc_std == pytest.approx(np.std(s.srocc_values, ddof=1), abs=1e-15)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            aggregate([])
