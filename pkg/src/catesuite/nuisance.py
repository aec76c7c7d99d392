"""Nuisance functions shared by the downstream estimators.

``fit_nuisance`` packages the outcome surfaces mu0 (control arm only) and
mu1 (treated arm only) plus the propensity e-hat (regression on the 0/1
treatment labels, clipped downstream). The returned object carries the
encoding plan it was fit under, so predictions on new datasets reuse the
exact same column layout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .data import CONTINUOUS, Dataset, EncodingPlan, encode
from .errors import ConfigError, ValidationError
from .learners import (
    CrossFitPlan,
    FunctionModel,
    LearnerSpec,
    Model,
    _as_seedseq,
    cross_fit_predict,
    fit_learner,
)

log = logging.getLogger("catesuite.nuisance")

DEFAULT_CLIP = (0.01, 0.99)


@dataclass(frozen=True)
class NuisanceModels:
    mu0: Model
    mu1: Model
    e: Model
    clip: Tuple[float, float]
    plan: EncodingPlan
    include_cluster: bool
    cross_fitted: bool = False
    # held-out values aligned with the rows of the dataset the nuisances
    # were fit on (present only when cross-fitting was requested)
    heldout: Optional[Dict[str, np.ndarray]] = None
    fit_unit_ids: Tuple[str, ...] = ()

    def _encode(self, ds: Dataset) -> np.ndarray:
        return self.plan.transform(ds)

    def clip_e(self, raw):
        lo, hi = self.clip
        return np.clip(raw, lo, hi)

    def predict_mu0(self, ds: Dataset) -> np.ndarray:
        return self.mu0.predict(self._encode(ds))

    def predict_mu1(self, ds: Dataset) -> np.ndarray:
        return self.mu1.predict(self._encode(ds))

    def predict_e_raw(self, ds: Dataset) -> np.ndarray:
        return self.e.predict(self._encode(ds))

    def predict_e(self, ds: Dataset) -> np.ndarray:
        """Clipped propensity predictions."""
        return self.clip_e(self.predict_e_raw(ds))

    def values_for(self, ds: Dataset):
        """(mu0, mu1, clipped e) for ``ds``; uses stored held-out values
        when ``ds`` is exactly the dataset the nuisances were fit on."""
        if (
            self.cross_fitted
            and self.heldout is not None
            and tuple(ds.unit_ids) == self.fit_unit_ids
        ):
            h = self.heldout
            return h["mu0"], h["mu1"], self.clip_e(h["e"])
        return self.predict_mu0(ds), self.predict_mu1(ds), self.predict_e(ds)


def fit_nuisance(
    ds: Dataset,
    spec_outcome: LearnerSpec,
    spec_propensity: LearnerSpec,
    clip: Tuple[float, float] = DEFAULT_CLIP,
    crossfit: Optional[CrossFitPlan] = None,
    include_cluster: bool = False,
    seed: int = 0,
) -> NuisanceModels:
    lo, hi = clip
    if not (0.0 < lo < hi < 1.0):
        raise ConfigError(f"clip bounds must satisfy 0 < lo < hi < 1, got {clip}")
    X, plan = encode(ds, include_cluster=include_cluster)
    z = ds.treatment
    y = ds.outcome
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    if len(treated) == 0 or len(control) == 0:
        raise ValidationError("both treatment arms must be nonempty")

    ss = _as_seedseq(seed).spawn(6)
    mu0 = fit_learner(spec_outcome, X[control], y[control], seed=ss[0])
    mu1 = fit_learner(spec_outcome, X[treated], y[treated], seed=ss[1])
    e = fit_learner(spec_propensity, X, z.astype(np.float64), seed=ss[2])

    heldout = None
    if crossfit is not None:
        if crossfit.fold_of_row.shape[0] != ds.n:
            raise ValidationError("cross-fit plan does not cover this dataset")
        h_mu0 = np.empty(ds.n)
        h_mu1 = np.empty(ds.n)
        seeds0 = ss[3].spawn(crossfit.n_folds)
        seeds1 = ss[4].spawn(crossfit.n_folds)
        for fold in range(crossfit.n_folds):
            tr = crossfit.train_rows(fold)
            te = crossfit.test_rows(fold)
            tr0 = tr[z[tr] == 0]
            tr1 = tr[z[tr] == 1]
            if len(tr0) == 0 or len(tr1) == 0:
                raise ValidationError(f"fold {fold}: a training arm is empty")
            m0 = fit_learner(spec_outcome, X[tr0], y[tr0], seed=seeds0[fold])
            m1 = fit_learner(spec_outcome, X[tr1], y[tr1], seed=seeds1[fold])
            h_mu0[te] = m0.predict(X[te])
            h_mu1[te] = m1.predict(X[te])
        h_e = cross_fit_predict(spec_propensity, X, z.astype(np.float64), crossfit, seed=ss[5])
        heldout = {"mu0": h_mu0, "mu1": h_mu1, "e": h_e}

    return NuisanceModels(
        mu0=mu0,
        mu1=mu1,
        e=e,
        clip=(float(lo), float(hi)),
        plan=plan,
        include_cluster=include_cluster,
        cross_fitted=crossfit is not None,
        heldout=heldout,
        fit_unit_ids=tuple(ds.unit_ids),
    )


def nuisance_from_functions(ds: Dataset, mu0, mu1, e, clip=DEFAULT_CLIP) -> NuisanceModels:
    """Package closed-form nuisance functions as a :class:`NuisanceModels`.

    ``mu0``/``mu1``/``e`` may be callables on the raw feature matrix or
    ready model objects. Only valid for all-continuous features, where the
    encoded matrix equals the raw one — this is the seam the known-truth
    recovery tests inject through.
    """
    if any(c.kind != CONTINUOUS for c in ds.columns):
        raise ConfigError("function-backed nuisances require all-continuous features")
    _, plan = encode(ds, include_cluster=False)

    def as_model(m):
        return m if hasattr(m, "predict") else FunctionModel(m)

    return NuisanceModels(
        mu0=as_model(mu0),
        mu1=as_model(mu1),
        e=as_model(e),
        clip=(float(clip[0]), float(clip[1])),
        plan=plan,
        include_cluster=False,
        cross_fitted=False,
        heldout=None,
        fit_unit_ids=tuple(ds.unit_ids),
    )


@dataclass(frozen=True)
class OverlapReport:
    min: float
    max: float
    deciles: Tuple[float, ...]  # 10th..90th percentiles of clipped e-hat
    n_below: int  # raw predictions under the lower clip bound
    n_above: int
    clip: Tuple[float, float]

    @property
    def n_flagged(self):
        return self.n_below + self.n_above

    def to_dict(self):
        return {
            "min": self.min,
            "max": self.max,
            "deciles": list(self.deciles),
            "n_below": self.n_below,
            "n_above": self.n_above,
            "n_flagged": self.n_flagged,
            "clip_lo": self.clip[0],
            "clip_hi": self.clip[1],
        }


def overlap_report(nm: NuisanceModels, ds: Dataset) -> OverlapReport:
    raw = nm.predict_e_raw(ds)
    lo, hi = nm.clip
    clipped = np.clip(raw, lo, hi)
    n_below = int(np.sum(raw < lo))
    n_above = int(np.sum(raw > hi))
    if n_below or n_above:
        log.info("overlap: %d unit(s) outside clip bounds (%d low, %d high)", n_below + n_above, n_below, n_above)
    deciles = tuple(float(q) for q in np.quantile(clipped, np.arange(0.1, 0.91, 0.1)))
    return OverlapReport(
        min=float(clipped.min()),
        max=float(clipped.max()),
        deciles=deciles,
        n_below=n_below,
        n_above=n_above,
        clip=nm.clip,
    )
