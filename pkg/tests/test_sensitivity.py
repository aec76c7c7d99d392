"""Sensitivity-analysis tests, cross-checked against brute-force enumeration
and scipy's classical signed-rank test."""

import itertools

import numpy as np
import pytest
from scipy import stats

from catesuite import EXACT_MAX_PAIRS, gamma_star, sensitivity_bound
from catesuite.errors import ConfigError, EstimationError


def brute_force_upper_p(diffs, gamma):
    """Independent oracle: enumerate all 2^S sign assignments, weight each
    positive sign by p+ = gamma/(1+gamma), and sum the probability of
    T+ >= observed T+."""
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    r = stats.rankdata(np.abs(d))
    t_obs = r[d > 0].sum()
    p_plus = gamma / (1.0 + gamma)
    total = 0.0
    s = len(d)
    for signs in itertools.product([0, 1], repeat=s):
        signs = np.asarray(signs)
        t = r[signs == 1].sum()
        if t >= t_obs - 1e-12:
            k = signs.sum()
            total += p_plus**k * (1 - p_plus) ** (s - k)
    return total


def test_five_positive_pairs_gamma_one():
    p = sensitivity_bound([1.0, 2.0, 3.0, 4.0, 5.0], gamma=1.0, exact=True)
    assert p == pytest.approx(1.0 / 32.0, abs=1e-12)


def test_five_positive_pairs_gamma_two():
    p = sensitivity_bound([1.0, 2.0, 3.0, 4.0, 5.0], gamma=2.0, exact=True)
    assert p == pytest.approx((2.0 / 3.0) ** 5, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_exact_matches_brute_force(seed):
    """Exact DP equals 2^S enumeration to 1e-12 (S <= 12, random ties and
    signs included)."""
    rng = np.random.default_rng(seed)
    s = int(rng.integers(3, 13))
    diffs = np.round(rng.normal(size=s) * 2, 1)  # rounding creates ties
    diffs[diffs == 0] = 0.5
    for gamma in (1.0, 1.5, 3.0):
        mine = sensitivity_bound(diffs, gamma, exact=True)
        oracle = brute_force_upper_p(diffs, gamma)
        assert mine == pytest.approx(oracle, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_gamma_one_equals_classical_signed_rank(seed):
    """At gamma = 1 the bound is the ordinary one-sided signed-rank p."""
    rng = np.random.default_rng(100 + seed)
    diffs = rng.normal(0.4, 1.0, size=12)
    diffs = diffs[diffs != 0]
    mine = sensitivity_bound(diffs, gamma=1.0, exact=True)
    ref = stats.wilcoxon(diffs, alternative="greater", mode="exact").pvalue
    assert mine == pytest.approx(ref, abs=1e-10)


def test_normal_mode_close_to_exact_at_s15():
    rng = np.random.default_rng(7)
    for _ in range(15):
        diffs = rng.normal(0.3, 1.0, size=15)
        for gamma in (1.0, 2.0):
            e = sensitivity_bound(diffs, gamma, exact=True)
            n = sensitivity_bound(diffs, gamma, exact=False)
            assert abs(e - n) < 0.02


def test_scale_invariance():
    rng = np.random.default_rng(8)
    diffs = rng.normal(0.5, 1.0, size=14)
    base = sensitivity_bound(diffs, 1.7, exact=True)
    for c in (0.001, 3.0, 1e6):
        assert sensitivity_bound(c * diffs, 1.7, exact=True) == pytest.approx(base, abs=1e-14)


def test_zero_differences_dropped():
    diffs = [0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    with_zeros = sensitivity_bound(diffs, 1.0, exact=True)
    without = sensitivity_bound([1.0, 2.0, 3.0, 4.0, 5.0], 1.0, exact=True)
    assert with_zeros == without


def test_all_zero_differences_error():
    with pytest.raises(EstimationError):
        sensitivity_bound([0.0, 0.0, 0.0], 1.0)


def test_exact_mode_size_limit():
    diffs = np.arange(1.0, float(EXACT_MAX_PAIRS) + 2)  # one too many
    with pytest.raises(ConfigError):
        sensitivity_bound(diffs, 1.0, exact=True)
    # normal mode handles it fine
    assert 0.0 <= sensitivity_bound(diffs, 1.0, exact=False) <= 1.0


def test_gamma_below_one_rejected():
    with pytest.raises(ConfigError):
        sensitivity_bound([1.0, 2.0], 0.9)


def test_monotone_in_gamma():
    rng = np.random.default_rng(9)
    diffs = rng.normal(0.5, 1.0, size=18)
    grid = [1.0, 1.2, 1.5, 2.0, 2.5, 3.0, 4.0]
    ps = [sensitivity_bound(diffs, g, exact=True) for g in grid]
    assert all(b >= a - 1e-14 for a, b in zip(ps, ps[1:]))


# ---------------------------------------------------------------------------
# gamma_star


def test_gamma_star_strong_positive_signal():
    """200 all-positive unit differences: significant well past gamma = 1,
    with a monotone p-grid and the reciprocal lower bound reported."""
    res = gamma_star(np.ones(200), alpha=0.05)
    assert res.mode == "normal"
    assert res.gamma_star is not None and res.gamma_star > 1.0
    assert res.gamma_lower == pytest.approx(1.0 / res.gamma_star)
    ps = np.asarray(res.p_values)
    assert np.all(np.diff(ps) >= -1e-14)
    assert res.p_values[0] < 1e-6


def test_gamma_star_null_pairs_undefined():
    diffs = np.array([1.0, -1.0] * 8)
    res = gamma_star(diffs, alpha=0.05)
    assert res.gamma_star is None
    assert res.gamma_lower is None


def test_gamma_star_grid_validation():
    diffs = np.ones(10)
    with pytest.raises(ConfigError):
        gamma_star(diffs, grid=[1.5, 2.0])  # must start at 1
    with pytest.raises(ConfigError):
        gamma_star(diffs, grid=[1.0, 1.0, 2.0])  # strictly ascending
    with pytest.raises(ConfigError):
        gamma_star(diffs, alpha=0.0)


def test_gamma_star_exact_auto_selection():
    res = gamma_star(np.arange(1.0, 9.0))
    assert res.mode == "exact"
    d = res.to_dict()
    assert d["statistic"] == "wilcoxon-signed-rank"
    assert len(d["grid"]) == len(res.gammas)


def test_gamma_star_accepts_matched_pairs():
    from catesuite import MatchedPairs

    pairs = MatchedPairs(
        treated_rows=np.arange(6),
        control_rows=np.arange(6) + 6,
        differences=np.array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
        pair_clusters=np.array(["a", "b"] * 3, dtype=object),
        metric={"type": "mahalanobis"},
        n_dropped=0,
    )
    res = gamma_star(pairs)
    assert res.p_values[0] == pytest.approx(1.0 / 64.0, abs=1e-12)
