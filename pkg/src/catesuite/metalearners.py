"""Meta-learners over the base-learner abstraction: S, T, X, MO, and R.

Every estimator is a :class:`CateModel` exposing ``predict_cate`` and a
canonical name ``"<kind>_<base>_<cluster|nocluster>"``. The ``fit_*``
functions are the production path; each model class can also be built
directly from injected component models (e.g. ``FunctionModel`` wrapping a
known truth), which is how the oracle-recovery tests exercise the algebra
separately from the fitting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .data import CONTINUOUS, Dataset, EncodingPlan, effective_cluster_ids, encode
from .errors import EstimationError, ValidationError
from .learners import (
    CrossFitPlan,
    LearnerSpec,
    Model,
    _as_seedseq,
    cross_fit_predict,
    fit_learner,
)
from .nuisance import DEFAULT_CLIP, NuisanceModels, fit_nuisance

log = logging.getLogger("catesuite.metalearners")


@dataclass(frozen=True)
class PseudoOutcome:
    """Per-row regression target (and weight) that a meta-learner feeds to
    its final base learner."""

    target: np.ndarray
    weight: np.ndarray
    tag: str  # one of "MO:R", "X:D1", "X:D0", "R:residual-ratio"


def modified_outcome_targets(y, z, e_hat, mu0_hat, mu1_hat) -> PseudoOutcome:
    """Adjusted modified outcome:
    R_i = (Z_i - e_i) / (e_i (1 - e_i)) * (Y_i - mu1_i (1 - e_i) - mu0_i e_i).
    Unbiased for tau(x) when the plugged-in nuisances are the truth."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e_hat, dtype=np.float64)
    mu0 = np.asarray(mu0_hat, dtype=np.float64)
    mu1 = np.asarray(mu1_hat, dtype=np.float64)
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValidationError("propensities must lie strictly inside (0, 1); clip first")
    r = (z - e) / (e * (1.0 - e)) * (y - mu1 * (1.0 - e) - mu0 * e)
    return PseudoOutcome(target=r, weight=np.ones_like(r), tag="MO:R")


def residual_ratio_targets(y, z, m_hat, e_hat, min_denom=1e-6):
    """Residual-on-residual pseudo-outcome:
    target (Y - m) / (W - e) with weight (W - e)^2.

    Rows whose denominator is smaller than ``min_denom`` in absolute value
    are flagged out via the returned keep mask (weight set to 0).
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m_hat, dtype=np.float64)
    e = np.asarray(e_hat, dtype=np.float64)
    denom = z - e
    keep = np.abs(denom) >= min_denom
    target = np.zeros_like(y)
    target[keep] = (y[keep] - m[keep]) / denom[keep]
    weight = np.where(keep, denom**2, 0.0)
    return PseudoOutcome(target=target, weight=weight, tag="R:residual-ratio"), keep


class CateModel:
    """Common behavior: encoding-aware prediction and canonical naming."""

    kind = "?"

    def __init__(self, plan, base_family, with_cluster, fit_unit_ids=()):
        self.plan = plan
        self.base_family = base_family
        self.with_cluster = bool(with_cluster)
        self.fit_unit_ids = tuple(fit_unit_ids)

    @property
    def name(self) -> str:
        suffix = "cluster" if self.with_cluster else "nocluster"
        return f"{self.kind}_{self.base_family}_{suffix}"

    def _encode_query(self, query) -> np.ndarray:
        if isinstance(query, Dataset):
            if self.plan is None:
                return np.ascontiguousarray(query.features)
            return self.plan.transform(query)
        X = np.ascontiguousarray(np.asarray(query, dtype=np.float64))
        if X.ndim != 2:
            raise ValidationError(f"query must be 2-D, got shape {X.shape}")
        if self.with_cluster:
            raise ValidationError(
                f"{self.name} was fit with cluster-id features; query it with a "
                "Dataset carrying a cluster column, not a bare matrix"
            )
        if self.plan is not None:
            if any(c.kind != CONTINUOUS for c in self.plan.columns):
                raise ValidationError(
                    "bare-matrix queries are only valid for all-continuous features; "
                    "pass a Dataset so categorical columns can be encoded"
                )
            if X.shape[1] != self.plan.n_outputs:
                raise ValidationError(
                    f"query has {X.shape[1]} columns, model expects {self.plan.n_outputs}"
                )
        return X

    def predict_cate(self, query) -> np.ndarray:
        X = self._encode_query(query)
        out = np.asarray(self._cate_from_encoded(X), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise EstimationError(f"{self.name} produced non-finite estimates")
        return out

    def _cate_from_encoded(self, X):  # pragma: no cover - abstract
        raise NotImplementedError


class TCate(CateModel):
    kind = "T"

    def __init__(self, mu0: Model, mu1: Model, plan=None, base_family="injected", with_cluster=False, fit_unit_ids=()):
        super().__init__(plan, base_family, with_cluster, fit_unit_ids)
        self.mu0 = mu0
        self.mu1 = mu1

    def _cate_from_encoded(self, X):
        return self.mu1.predict(X) - self.mu0.predict(X)


class SCate(CateModel):
    kind = "S"

    def __init__(self, joint: Model, plan=None, base_family="injected", with_cluster=False, fit_unit_ids=()):
        super().__init__(plan, base_family, with_cluster, fit_unit_ids)
        self.joint = joint

    def _cate_from_encoded(self, X):
        ones = np.ones((X.shape[0], 1))
        return self.joint.predict(np.hstack([X, ones])) - self.joint.predict(
            np.hstack([X, np.zeros((X.shape[0], 1))])
        )


class MOCate(CateModel):
    kind = "MO"

    def __init__(self, model: Model, plan=None, base_family="injected", with_cluster=False, fit_unit_ids=()):
        super().__init__(plan, base_family, with_cluster, fit_unit_ids)
        self.model = model

    def _cate_from_encoded(self, X):
        return self.model.predict(X)


class XCate(CateModel):
    kind = "X"

    def __init__(
        self,
        tau0: Model,
        tau1: Model,
        e_model: Model,
        clip: Optional[Tuple[float, float]] = None,
        plan=None,
        base_family="injected",
        with_cluster=False,
        fit_unit_ids=(),
    ):
        super().__init__(plan, base_family, with_cluster, fit_unit_ids)
        self.tau0 = tau0
        self.tau1 = tau1
        self.e_model = e_model
        self.clip = clip

    def _cate_from_encoded(self, X):
        e = self.e_model.predict(X)
        if self.clip is not None:
            e = np.clip(e, self.clip[0], self.clip[1])
        return e * self.tau0.predict(X) + (1.0 - e) * self.tau1.predict(X)


class RCate(CateModel):
    kind = "R"

    def __init__(self, model: Model, n_dropped=0, plan=None, base_family="injected", with_cluster=False, fit_unit_ids=()):
        super().__init__(plan, base_family, with_cluster, fit_unit_ids)
        self.model = model
        self.n_dropped = int(n_dropped)

    def _cate_from_encoded(self, X):
        return self.model.predict(X)


def fit_t(ds: Dataset, base: LearnerSpec, include_cluster=False, seed=0, nm: Optional[NuisanceModels] = None) -> TCate:
    """tau-hat(x) = mu1-hat(x) - mu0-hat(x), each arm fit separately.

    Both arm fits share one derived seed, so relabeling Z -> 1-Z and
    refitting yields the exactly negated surface.
    """
    if nm is not None:
        return TCate(
            nm.mu0, nm.mu1, plan=nm.plan, base_family=base.family,
            with_cluster=nm.include_cluster, fit_unit_ids=tuple(ds.unit_ids),
        )
    X, plan = encode(ds, include_cluster=include_cluster)
    z, y = ds.treatment, ds.outcome
    arm_seed = _as_seedseq(seed).spawn(1)[0]
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    if len(treated) == 0 or len(control) == 0:
        raise ValidationError("both treatment arms must be nonempty")
    mu0 = fit_learner(base, X[control], y[control], seed=arm_seed)
    mu1 = fit_learner(base, X[treated], y[treated], seed=arm_seed)
    return TCate(mu0, mu1, plan=plan, base_family=base.family,
                 with_cluster=include_cluster, fit_unit_ids=tuple(ds.unit_ids))


def fit_s(ds: Dataset, base: LearnerSpec, include_cluster=False, seed=0) -> SCate:
    """One joint fit of mu-hat(x, z) with z appended as a feature column."""
    X, plan = encode(ds, include_cluster=include_cluster)
    Xz = np.hstack([X, ds.treatment[:, None].astype(np.float64)])
    joint = fit_learner(base, Xz, ds.outcome, seed=_as_seedseq(seed).spawn(1)[0])
    return SCate(joint, plan=plan, base_family=base.family,
                 with_cluster=include_cluster, fit_unit_ids=tuple(ds.unit_ids))


def fit_mo(ds: Dataset, base: LearnerSpec, nm: NuisanceModels, seed=0) -> MOCate:
    """Regress the adjusted modified outcome R_i on the features."""
    mu0v, mu1v, ev = nm.values_for(ds)
    pseudo = modified_outcome_targets(ds.outcome, ds.treatment, ev, mu0v, mu1v)
    X = nm.plan.transform(ds)
    model = fit_learner(base, X, pseudo.target, seed=_as_seedseq(seed).spawn(1)[0])
    return MOCate(model, plan=nm.plan, base_family=base.family,
                  with_cluster=nm.include_cluster, fit_unit_ids=tuple(ds.unit_ids))


def fit_x(ds: Dataset, base: LearnerSpec, nm: NuisanceModels, seed=0) -> XCate:
    """Imputed-effect regressions per arm, blended by the propensity:
    tau-hat(x) = e-hat(x) * tau0-hat(x) + (1 - e-hat(x)) * tau1-hat(x)."""
    mu0v, mu1v, _ = nm.values_for(ds)
    X = nm.plan.transform(ds)
    z, y = ds.treatment, ds.outcome
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    if len(treated) == 0 or len(control) == 0:
        raise ValidationError("both treatment arms must be nonempty")
    d1 = y[treated] - mu0v[treated]
    d0 = mu1v[control] - y[control]
    ss = _as_seedseq(seed).spawn(2)
    tau1 = fit_learner(base, X[treated], d1, seed=ss[0])
    tau0 = fit_learner(base, X[control], d0, seed=ss[1])
    return XCate(tau0, tau1, e_model=nm.e, clip=nm.clip, plan=nm.plan,
                 base_family=base.family, with_cluster=nm.include_cluster,
                 fit_unit_ids=tuple(ds.unit_ids))


def fit_r(
    ds: Dataset,
    base: LearnerSpec,
    plan: Optional[CrossFitPlan] = None,
    include_cluster=False,
    n_folds=5,
    clip=DEFAULT_CLIP,
    seed=0,
) -> RCate:
    """Weighted pseudo-outcome regression with cross-fitted nuisances.

    m-hat and e-hat are held-out (cross-fitted with the same base family);
    the final stage regresses (Y - m-hat)/(W - e-hat) on X with weights
    (W - e-hat)^2. Rows with a near-zero denominator are dropped and
    counted, not fatal.
    """
    ss = _as_seedseq(seed).spawn(4)
    if plan is None:
        plan = CrossFitPlan.build(effective_cluster_ids(ds), n_folds, seed=ss[0])
    X, enc_plan = encode(ds, include_cluster=include_cluster)
    y = ds.outcome
    z = ds.treatment.astype(np.float64)
    m_hat = cross_fit_predict(base, X, y, plan, seed=ss[1])
    e_hat = np.clip(cross_fit_predict(base, X, z, plan, seed=ss[2]), clip[0], clip[1])
    pseudo, keep = residual_ratio_targets(y, z, m_hat, e_hat)
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.warning("R-learner dropped %d row(s) with |W - e-hat| below tolerance", n_dropped)
    if keep.sum() == 0:
        raise EstimationError("R-learner: every row had a degenerate denominator")
    model = fit_learner(base, X[keep], pseudo.target[keep], w=pseudo.weight[keep], seed=ss[3])
    return RCate(model, n_dropped=n_dropped, plan=enc_plan, base_family=base.family,
                 with_cluster=include_cluster, fit_unit_ids=tuple(ds.unit_ids))
