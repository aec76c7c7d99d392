"""Honest causal forest tests."""

import numpy as np
import pytest

from catesuite import CausalForestSpec, DgpSpec, EstimationError, fit_causal_forest, generate
from catesuite import _tree_core as tc
from catesuite.errors import ConfigError

from _helpers import toy_dataset


def test_constant_effect_recovery():
    """tau = 2, e = 0.5, n = 2000: 95% of held-out predictions within 0.25."""
    ds, _ = generate(
        DgpSpec("constant_effect", n=2000, seed=1, params=(("tau", 2.0), ("e", 0.5)))
    )
    model = fit_causal_forest(ds, CausalForestSpec(n_trees=200, seed=2))
    hold, _ = generate(DgpSpec("constant_effect", n=500, seed=42))
    pred = model.predict_cate(hold)
    assert np.mean(np.abs(pred - 2.0) <= 0.25) >= 0.95


def test_two_region_effect():
    """tau = 0 for x1 < 0 and 1 for x1 >= 0: per-region means within 0.15."""
    rng = np.random.default_rng(3)
    n = 4000
    ds = toy_dataset(n=n, d=2, seed=3, noise=0.0)
    x1 = ds.features[:, 0]
    tau = (x1 >= 0).astype(float)
    y = 0.2 * x1 + tau * ds.treatment + rng.normal(0, 0.1, size=n)
    ds = ds.with_outcome(y)
    model = fit_causal_forest(ds, CausalForestSpec(n_trees=300, seed=4))
    pred = model.predict_cate(ds)
    lo, hi = pred[x1 < -0.1], pred[x1 > 0.1]
    assert abs(lo.mean() - 0.0) < 0.15
    assert abs(hi.mean() - 1.0) < 0.15


def test_root_only_tree_is_estimation_half_diff_in_means():
    """A tree with no valid split predicts one number: the difference in
    means over its estimation-half rows."""
    ds = toy_dataset(n=24, noise=0.5, seed=5)
    # min leaf sizes high enough that the root cannot split
    spec = CausalForestSpec(
        n_trees=1, min_leaf_treated=5, min_leaf_control=5, subsample=1.0, seed=6
    )
    model = fit_causal_forest(ds, spec)
    (arrays, est_rows), = model.trees
    feature = arrays[0]
    assert feature[0] < 0  # root is a leaf
    z, y = ds.treatment[est_rows], ds.outcome[est_rows]
    expected = y[z == 1].mean() - y[z == 0].mean()
    pred = model.predict_cate(ds)
    np.testing.assert_allclose(pred, expected, atol=1e-12)


def test_every_leaf_satisfies_arm_minimums():
    """Traverse each tree with its estimation rows: every reached leaf holds
    at least min_leaf_treated treated and min_leaf_control control units."""
    ds, _ = generate(DgpSpec("linear_tau", n=600, seed=7))
    spec = CausalForestSpec(n_trees=25, min_leaf_treated=4, min_leaf_control=6, seed=8)
    model = fit_causal_forest(ds, spec)
    from catesuite import encode

    X, _ = encode(ds)
    for arrays, est_rows in model.trees:
        f, t, l, r, v, _n = arrays
        leaves = tc.leaf_of(f, t, l, r, np.ascontiguousarray(X[est_rows]))
        z = ds.treatment[est_rows]
        for leaf in np.unique(leaves):
            in_leaf = leaves == leaf
            assert np.sum(z[in_leaf] == 1) >= spec.min_leaf_treated
            assert np.sum(z[in_leaf] == 0) >= spec.min_leaf_control
        # structure half obeys the same minimums: check predictions finite
        assert np.all(np.isfinite(v[: _n]))


def test_outcome_shift_invariance_exact():
    ds, _ = generate(DgpSpec("linear_tau", n=400, seed=9))
    spec = CausalForestSpec(n_trees=40, seed=10)
    a = fit_causal_forest(ds, spec).predict_cate(ds)
    b = fit_causal_forest(ds.with_outcome(ds.outcome + 55.0), spec).predict_cate(ds)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_deterministic_and_thread_independent():
    ds, _ = generate(DgpSpec("linear_tau", n=300, seed=11))
    spec = CausalForestSpec(n_trees=30, seed=12)
    a = fit_causal_forest(ds, spec, threads=1).predict_cate(ds)
    b = fit_causal_forest(ds, spec, threads=4).predict_cate(ds)
    np.testing.assert_array_equal(a, b)


def test_more_trees_less_seed_variance():
    """Prediction spread across refits with different seeds shrinks as the
    forest grows (allowing Monte Carlo slack)."""
    ds, _ = generate(DgpSpec("linear_tau", n=400, seed=13))
    q = ds.features[:50]

    def spread(n_trees):
        preds = [
            fit_causal_forest(ds, CausalForestSpec(n_trees=n_trees, seed=s)).predict_cate(q)
            for s in range(5)
        ]
        return np.std(np.stack(preds), axis=0).mean()

    assert spread(100) < spread(10) * 0.75


def test_infeasible_spec_raises():
    ds = toy_dataset(n=12)
    spec = CausalForestSpec(n_trees=2, min_leaf_treated=10, min_leaf_control=10)
    with pytest.raises(EstimationError, match="infeasible"):
        fit_causal_forest(ds, spec)


def test_non_honest_mode():
    ds, _ = generate(DgpSpec("constant_effect", n=800, seed=14, params=(("e", 0.5),)))
    model = fit_causal_forest(ds, CausalForestSpec(n_trees=60, honest=False, seed=15))
    assert abs(model.predict_cate(ds).mean() - 0.25) < 0.15
    # honest mode is the default
    assert CausalForestSpec().honest


def test_spec_validation():
    with pytest.raises(ConfigError):
        CausalForestSpec(n_trees=0)
    with pytest.raises(ConfigError):
        CausalForestSpec(min_leaf_treated=1)  # must be >= 2
    with pytest.raises(ConfigError):
        CausalForestSpec(min_leaf_control=1)
    with pytest.raises(ConfigError):
        CausalForestSpec(subsample=0.0)
    with pytest.raises(ConfigError):
        CausalForestSpec(subsample=1.5)
    with pytest.raises(ConfigError):
        CausalForestSpec(honesty_fraction=0.0)


def test_name_registration():
    ds = toy_dataset(n=60, noise=0.3)
    m = fit_causal_forest(ds, CausalForestSpec(n_trees=5))
    assert m.name == "CF_forest_nocluster"
    m = fit_causal_forest(ds, CausalForestSpec(n_trees=5), include_cluster=True)
    assert m.name == "CF_forest_cluster"
