import itertools

import numpy as np
import pytest
from scipy import stats as sps

from aadnet.stats import exact_p_value, wilcoxon_signed_rank


def brute_force_p(a, b):
    """Two-sided p by enumerating all 2^n sign flips of the nonzero differences."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    if d.size == 0:
        return 1.0
    ranks = sps.rankdata(np.abs(d))
    obs = ranks[d > 0].sum()
    sums = np.array([sum(r for r, s in zip(ranks, signs) if s)
                     for signs in itertools.product((0, 1), repeat=len(d))])
    lower = np.mean(sums <= obs + 1e-9)
    upper = np.mean(sums >= obs - 1e-9)
    return min(1.0, 2 * min(lower, upper))


@pytest.mark.parametrize("n", range(1, 11))
def test_exact_matches_bruteforce(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        # coarse grid so ties and zero differences occur
        a = rng.integers(0, 6, n) / 5
        b = rng.integers(0, 6, n) / 5
        res = wilcoxon_signed_rank(a, b)
        assert abs(res.p_value - brute_force_p(a, b)) < 1e-12


def test_hand_example_all_positive():
    res = wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1])
    assert res.w_plus == 15 and res.w_minus == 0 and res.statistic == 0
    assert res.p_value == pytest.approx(2 / 32, abs=1e-15)
    assert res.direction == 1 and res.method == "exact"


def test_identical_samples_give_p_one():
    res = wilcoxon_signed_rank([0.7, 0.8, 0.9], [0.7, 0.8, 0.9])
    assert res.p_value == 1.0 and res.n == 0 and res.method == "degenerate" and res.direction == 0


def test_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=12), rng.normal(size=12)
    ab, ba = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
    assert ab.p_value == ba.p_value
    assert ab.statistic == ba.statistic
    assert ab.w_plus == ba.w_minus
    assert ab.direction == -ba.direction


def test_p_value_is_a_probability():
    rng = np.random.default_rng(1)
    for n in (3, 8, 20, 40, 200):
        r = wilcoxon_signed_rank(rng.normal(size=n), rng.normal(size=n))
        assert 0 <= r.p_value <= 1


def test_cross_check_with_scipy_exact_no_ties():
    rng = np.random.default_rng(2)
    for n in (5, 9, 15, 25):
        a, b = rng.normal(size=n), rng.normal(size=n)
        ours = wilcoxon_signed_rank(a, b).p_value
        ref = sps.wilcoxon(a, b, method="exact").pvalue
        assert ours == pytest.approx(ref, rel=1e-9)


def test_cross_check_with_scipy_normal_approximation():
    rng = np.random.default_rng(3)
    a = np.round(rng.normal(size=60), 1)
    b = np.round(rng.normal(size=60), 1)
    ours = wilcoxon_signed_rank(a, b)
    ref = sps.wilcoxon(a, b, zero_method="wilcox", correction=True, method="approx")
    assert ours.method == "normal"
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_exact_p_of_extreme_statistic():
    assert exact_p_value(np.arange(1, 11), 0.0) == pytest.approx(2 / 1024, abs=1e-15)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2], [1, 2, 3])
