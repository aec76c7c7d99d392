"""Meta-learner tests: pseudo-outcome algebra, oracle recovery, fit paths."""

import numpy as np
import pytest

from catesuite import (
    ConstantModel,
    DgpSpec,
    EstimationError,
    FunctionModel,
    LearnerSpec,
    MOCate,
    SCate,
    TCate,
    ValidationError,
    XCate,
    fit_mo,
    fit_nuisance,
    fit_r,
    fit_s,
    fit_t,
    fit_x,
    generate,
    modified_outcome_targets,
    nuisance_from_functions,
    residual_ratio_targets,
    score,
)

from _helpers import toy_dataset

GBT = LearnerSpec.gbt(n_rounds=80)
FOREST = LearnerSpec.forest(n_trees=60)


# ---------------------------------------------------------------------------
# pseudo-outcome algebra (hand examples)


def test_modified_outcome_hand_values():
    # treated: Z=1, e=0.5, mu1=mu0=0, Y=1 -> R = 2
    p = modified_outcome_targets(y=[1.0], z=[1], e_hat=[0.5], mu0_hat=[0.0], mu1_hat=[0.0])
    assert p.target[0] == pytest.approx(2.0)
    # control: Z=0, e=0.5, mu1=1, mu0=0, Y=0 -> R = 1 (the true unit effect)
    p = modified_outcome_targets(y=[0.0], z=[0], e_hat=[0.5], mu0_hat=[0.0], mu1_hat=[1.0])
    assert p.target[0] == pytest.approx(1.0)
    assert p.tag == "MO:R"


def test_modified_outcome_requires_interior_propensity():
    with pytest.raises(ValidationError):
        modified_outcome_targets([1.0], [1], [1.0], [0.0], [0.0])
    with pytest.raises(ValidationError):
        modified_outcome_targets([1.0], [1], [0.0], [0.0], [0.0])


def test_modified_outcome_unbiased_at_true_nuisances():
    """With true nuisances plugged in, E[R_i | X=x] = tau(x): Monte Carlo at
    a fixed x with tau(x) = sin(x1)."""
    rng = np.random.default_rng(0)
    n = 100_000
    x1 = 0.7
    tau = np.sin(x1)
    e, mu0 = 0.33, 1.5
    z = (rng.uniform(size=n) < e).astype(float)
    y = mu0 + tau * z + rng.normal(0, 0.5, size=n)
    p = modified_outcome_targets(
        y, z, np.full(n, e), np.full(n, mu0), np.full(n, mu0 + tau)
    )
    assert abs(p.target.mean() - tau) < 0.02


def test_residual_ratio_hand_values():
    p, keep = residual_ratio_targets(y=[1.0], z=[1.0], m_hat=[0.0], e_hat=[0.5])
    assert keep[0]
    assert p.target[0] == pytest.approx(2.0)
    assert p.weight[0] == pytest.approx(0.25)
    assert p.tag == "R:residual-ratio"


def test_residual_ratio_flags_degenerate_rows():
    _, keep = residual_ratio_targets(
        y=[1.0, 1.0], z=[1.0, 1.0], m_hat=[0.0, 0.0], e_hat=[1.0 - 1e-9, 0.5]
    )
    assert list(keep) == [False, True]


# ---------------------------------------------------------------------------
# oracle recovery: injected true component models make S/T/X pointwise exact


def _oracle_query(seed=1, n=200, d=2):
    return np.random.default_rng(seed).normal(size=(n, d))


def test_t_oracle_pointwise_exact():
    mu0 = FunctionModel(lambda X: 0.5 * X[:, 0])
    mu1 = FunctionModel(lambda X: 0.5 * X[:, 0] + np.sin(X[:, 1]))
    model = TCate(mu0, mu1)
    q = _oracle_query()
    np.testing.assert_array_equal(model.predict_cate(q), mu1.predict(q) - mu0.predict(q))
    np.testing.assert_allclose(model.predict_cate(q), np.sin(q[:, 1]), atol=1e-12)


def test_s_oracle_pointwise_exact():
    joint = FunctionModel(lambda Xz: Xz[:, 0] + 2.0 * Xz[:, -1])  # z is the last column
    model = SCate(joint)
    q = _oracle_query()
    np.testing.assert_allclose(model.predict_cate(q), 2.0, atol=1e-12)


def test_x_oracle_pointwise_exact():
    tau = lambda X: 1.0 + X[:, 0] ** 2
    model = XCate(
        tau0=FunctionModel(tau),
        tau1=FunctionModel(tau),
        e_model=ConstantModel(0.33),
    )
    q = _oracle_query()
    np.testing.assert_allclose(model.predict_cate(q), tau(q), atol=1e-12)


def test_x_convex_combination_hand_value():
    model = XCate(tau0=ConstantModel(1.0), tau1=ConstantModel(2.0), e_model=ConstantModel(0.3))
    q = np.zeros((4, 2))
    np.testing.assert_allclose(model.predict_cate(q), 1.7)


def test_x_propensity_endpoints():
    """e = 0 collapses to tau1; e = 1 collapses to tau0."""
    tau0, tau1 = ConstantModel(-3.0), ConstantModel(4.0)
    q = np.zeros((3, 2))
    at0 = XCate(tau0, tau1, e_model=ConstantModel(0.0)).predict_cate(q)
    at1 = XCate(tau0, tau1, e_model=ConstantModel(1.0)).predict_cate(q)
    np.testing.assert_allclose(at0, 4.0)
    np.testing.assert_allclose(at1, -3.0)


def test_mo_oracle_is_regression_of_r():
    model = MOCate(FunctionModel(lambda X: np.cos(X[:, 0])))
    q = _oracle_query()
    np.testing.assert_array_equal(model.predict_cate(q), np.cos(q[:, 0]))


# ---------------------------------------------------------------------------
# fitted behavior


def test_t_constant_arms():
    ds = toy_dataset(n=50)
    y = np.where(ds.treatment == 1, 5.0, 2.0)
    model = fit_t(ds.with_outcome(y), GBT, seed=1)
    np.testing.assert_allclose(model.predict_cate(ds), 3.0, atol=1e-12)
    assert model.name == "T_gbt_nocluster"


def test_t_zero_effect_constant_outcome():
    ds = toy_dataset(n=50)
    model = fit_t(ds.with_outcome(np.full(50, 1.0)), FOREST, seed=2)
    np.testing.assert_allclose(model.predict_cate(ds), 0.0, atol=1e-12)


def test_t_arm_swap_antisymmetry():
    """Relabeling Z -> 1-Z negates the fitted surface exactly."""
    ds = toy_dataset(n=80, noise=0.3, seed=5)
    swapped = ds.with_treatment(1 - ds.treatment)
    a = fit_t(ds, FOREST, seed=9).predict_cate(ds)
    b = fit_t(swapped, FOREST, seed=9).predict_cate(ds)
    np.testing.assert_array_equal(a, -b)


def test_t_recovers_linear_tau():
    ds, truth = generate(DgpSpec("linear_tau", n=2000, noise_sd=0.0, seed=3))
    # honest bootstrap forest so tree variance averages out
    model = fit_t(ds, LearnerSpec.forest(n_trees=400, mtry=2, honest=True, min_leaf=3), seed=4)
    grid_ds, _ = generate(DgpSpec("linear_tau", n=500, noise_sd=0.0, seed=99))
    rmse = score(model.predict_cate(grid_ds), truth.tau(grid_ds.features), "rmse")
    assert rmse <= 0.1


def test_s_constant_outcome():
    ds = toy_dataset(n=50)
    model = fit_s(ds.with_outcome(np.full(50, 7.0)), GBT, seed=1)
    np.testing.assert_allclose(model.predict_cate(ds), 0.0, atol=1e-12)


def test_s_zero_effect_near_zero():
    ds = toy_dataset(n=400, noise=0.0, tau=0.0, seed=6)  # y = x1 exactly
    model = fit_s(ds, GBT, seed=7)
    pred = model.predict_cate(ds)
    assert np.max(np.abs(pred)) < 0.2
    assert abs(pred.mean()) < 0.02


def test_s_additive_effect():
    """Y = x1 + 2 z exactly -> S-learner close to 2 everywhere."""
    ds = toy_dataset(n=2000, tau=2.0, noise=0.0, seed=8)
    model = fit_s(ds, LearnerSpec.forest(n_trees=100), seed=9)
    pred = model.predict_cate(ds)
    assert abs(pred.mean() - 2.0) < 0.1


def test_mo_fit_recovers_constant_effect():
    ds, truth = generate(DgpSpec("constant_effect", n=3000, seed=10))
    nm = nuisance_from_functions(ds, truth.mu0, truth.mu1, truth.e)
    model = fit_mo(ds, GBT, nm, seed=11)
    pred = model.predict_cate(ds)
    assert abs(pred.mean() - 0.25) < 0.05
    assert model.name == "MO_gbt_nocluster"


def test_x_unbalanced_beats_t_on_one_draw():
    ds, truth = generate(DgpSpec("unbalanced_arms", n=4000, seed=12))
    nm = fit_nuisance(ds, GBT, LearnerSpec.forest(n_trees=50, min_leaf=200), seed=13)
    hold, _ = generate(DgpSpec("unbalanced_arms", n=1000, seed=77))
    tru = truth.tau(hold.features)
    x_rmse = score(fit_x(ds, GBT, nm, seed=14).predict_cate(hold), tru, "rmse")
    t_rmse = score(fit_t(ds, GBT, seed=14).predict_cate(hold), tru, "rmse")
    assert x_rmse <= t_rmse + 0.05  # systematic comparison lives in acceptance


def test_r_ridge_recovers_constant_effect_exactly():
    """True m and e injected, tau constant: the weighted ridge (lam=0) final
    stage returns the constant exactly."""
    rng = np.random.default_rng(15)
    n = 400
    ds = toy_dataset(n=n, seed=15)
    tau_c = 0.8
    e = 0.5
    z = ds.treatment.astype(float)
    # Y = x1 + tau_c * z, m(x) = x1 + tau_c * e
    y = ds.features[:, 0] + tau_c * z
    ds = ds.with_outcome(y)
    m_hat = ds.features[:, 0] + tau_c * e
    pseudo, keep = residual_ratio_targets(y, z, m_hat, np.full(n, e))
    assert keep.all()
    X = ds.features
    from catesuite import fit_learner

    model = fit_learner(LearnerSpec.ridge(lam=0.0), X, pseudo.target, w=pseudo.weight)
    np.testing.assert_allclose(model.predict(X), tau_c, atol=1e-8)


def test_r_fit_heldout_rmse():
    ds, truth = generate(DgpSpec("linear_tau", n=2000, seed=16))
    # shallow boosting: the pseudo-outcome is noisy, deep fits chase it
    model = fit_r(ds, LearnerSpec.gbt(n_rounds=60, max_depth=2), seed=17)
    hold, _ = generate(DgpSpec("linear_tau", n=500, seed=88))
    rmse = score(model.predict_cate(hold), truth.tau(hold.features), "rmse")
    assert rmse <= 0.15
    assert model.n_dropped == 0
    assert model.name == "R_gbt_nocluster"


def _twin_dataset(treatments):
    """Pairs of identical points; twins land in opposite cross-fit folds, so
    a knn(k=1) held-out propensity is exactly the twin's z."""
    from catesuite import CrossFitPlan, Dataset
    from catesuite.data import CONTINUOUS, Column

    z = np.asarray(treatments, dtype=np.int64)
    n = len(z)
    x = np.repeat(np.arange(n // 2, dtype=float), 2)[:, None]
    ds = Dataset(
        unit_ids=np.array([f"t{i}" for i in range(n)], dtype=object),
        columns=(Column("x1", CONTINUOUS),),
        features=x,
        treatment=z,
        outcome=np.arange(n, dtype=float),
    )
    plan = CrossFitPlan(n_folds=2, fold_of_row=np.tile([0, 1], n // 2))
    return ds, plan


def test_r_drops_degenerate_rows():
    # twins 0-1: same arm (degenerate); remaining twins: opposite arms (kept)
    ds, plan = _twin_dataset([1, 1] + [0, 1] * 5)
    model = fit_r(ds, LearnerSpec.knn(k=1), plan=plan, clip=(1e-9, 1 - 1e-9), seed=19)
    assert model.n_dropped == 2


def test_r_all_degenerate_rows_fail():
    # every twin shares its arm, so every held-out e-hat equals z exactly
    ds, plan = _twin_dataset([1, 1, 0, 0] * 3)
    with pytest.raises(EstimationError):
        fit_r(ds, LearnerSpec.knn(k=1), plan=plan, clip=(1e-9, 1 - 1e-9), seed=19)


def test_outcome_shift_equivariance():
    """Adding a constant to Y leaves T/X/MO/R surfaces unchanged (shift-
    refit nuisances, same seeds)."""
    ds, truth = generate(DgpSpec("linear_tau", n=500, seed=20))
    shifted = ds.with_outcome(ds.outcome + 100.0)
    q = ds

    t0 = fit_t(ds, GBT, seed=21).predict_cate(q)
    t1 = fit_t(shifted, GBT, seed=21).predict_cate(q)
    np.testing.assert_allclose(t0, t1, atol=1e-6)

    nm0 = fit_nuisance(ds, GBT, GBT, seed=22)
    nm1 = fit_nuisance(shifted, GBT, GBT, seed=22)
    for fitter in (fit_x, fit_mo):
        a = fitter(ds, GBT, nm0, seed=23).predict_cate(q)
        b = fitter(shifted, GBT, nm1, seed=23).predict_cate(q)
        np.testing.assert_allclose(a, b, atol=1e-6)

    r0 = fit_r(ds, GBT, seed=24).predict_cate(q)
    r1 = fit_r(shifted, GBT, seed=24).predict_cate(q)
    np.testing.assert_allclose(r0, r1, atol=1e-6)


def test_permuted_query_rows():
    ds = toy_dataset(n=60, noise=0.2, seed=25)
    model = fit_t(ds, FOREST, seed=26)
    q = np.random.default_rng(27).normal(size=(30, 2))
    perm = np.random.default_rng(28).permutation(30)
    np.testing.assert_array_equal(model.predict_cate(q)[perm], model.predict_cate(q[perm]))


def test_with_cluster_model_requires_cluster_ids():
    ds = toy_dataset(n=40)
    model = fit_t(ds, GBT, include_cluster=True, seed=29)
    assert model.name == "T_gbt_cluster"
    from catesuite import Dataset

    bare = Dataset(
        unit_ids=ds.unit_ids,
        columns=ds.columns,
        features=ds.features,
        treatment=ds.treatment,
        outcome=ds.outcome,
    )
    with pytest.raises(ValidationError):
        model.predict_cate(bare)


def test_bare_matrix_query_rejected_for_cluster_models():
    ds = toy_dataset(n=40)
    model = fit_t(ds, GBT, include_cluster=True, seed=30)
    with pytest.raises(ValidationError):
        model.predict_cate(np.zeros((5, 2)))


def test_single_arm_rejected():
    ds = toy_dataset(n=40)
    one_arm = np.ones(40, dtype=np.int64)
    with pytest.raises(Exception):
        fit_t(ds.with_treatment(one_arm), GBT)
