"""Run many CATE estimators side by side and quantify their disagreement.

The point of the suite is NOT to pick a winner: per-unit spread across
defensible estimators is the diagnostic, and the envelope policy turns
disagreement into explicit abstention.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .causal_forest import CausalForestSpec, fit_causal_forest
from .data import Dataset
from .errors import ConfigError, EstimationError, ValidationError
from .learners import LearnerSpec, _as_seedseq
from .metalearners import fit_mo, fit_r, fit_s, fit_t, fit_x
from .nuisance import DEFAULT_CLIP, fit_nuisance

log = logging.getLogger("catesuite.stability")

KINDS = ("S", "T", "X", "MO", "R", "CF")


@dataclass(frozen=True)
class EstimatorDef:
    kind: str
    base: str  # learner family; CF always reads "forest"
    with_cluster: bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}")

    @property
    def name(self) -> str:
        suffix = "cluster" if self.with_cluster else "nocluster"
        return f"{self.kind}_{self.base}_{suffix}"


def _default_entries() -> Tuple[EstimatorDef, ...]:
    out = []
    for flag in (False, True):
        for kind in ("S", "T", "X", "MO"):
            for base in ("forest", "gbt"):
                out.append(EstimatorDef(kind, base, flag))
        for base in ("forest", "gbt"):
            out.append(EstimatorDef("R", base, flag))
        out.append(EstimatorDef("CF", "forest", flag))
    return tuple(out)


@dataclass(frozen=True)
class SuiteSpec:
    estimators: Tuple[EstimatorDef, ...] = field(default_factory=_default_entries)
    clip: Tuple[float, float] = DEFAULT_CLIP
    n_folds: int = 5  # cross-fitting folds for R entries
    master_seed: int = 0
    # optional hyperparameter overrides per base family, e.g.
    # (("forest", (("n_trees", 200),)),)
    base_params: Tuple[Tuple[str, Tuple[Tuple[str, object], ...]], ...] = ()
    cf: CausalForestSpec = field(default_factory=CausalForestSpec)

    def __post_init__(self):
        if not self.estimators:
            raise ConfigError("suite must contain at least one estimator")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigError("estimator names must be unique")

    def base_spec(self, family: str) -> LearnerSpec:
        for fam, params in self.base_params:
            if fam == family:
                return LearnerSpec(family, tuple(params))
        if family == "forest":
            return LearnerSpec.forest()
        if family == "gbt":
            return LearnerSpec.gbt()
        if family == "knn":
            return LearnerSpec.knn()
        if family == "ridge":
            return LearnerSpec.ridge()
        if family == "tree":
            return LearnerSpec.tree()
        raise ConfigError(f"unknown base family {family!r}")

    @classmethod
    def default(cls, master_seed: int = 0) -> "SuiteSpec":
        return cls(master_seed=master_seed)


@dataclass(frozen=True)
class EstimateMatrix:
    unit_ids: Tuple[str, ...]
    names: Tuple[str, ...]
    values: np.ndarray = field(compare=False)  # (n_units, n_estimators)
    failures: Dict[str, str] = field(default_factory=dict, compare=False)
    master_seed: int = 0
    models: Optional[Dict[str, object]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.unit_ids), len(self.names)):
            raise ValidationError("estimate matrix shape does not match labels")
        if not np.all(np.isfinite(v)):
            raise ValidationError("estimate matrix must not contain NaN/Inf")
        object.__setattr__(self, "values", v)

    @property
    def n_units(self):
        return len(self.unit_ids)

    @property
    def n_estimators(self):
        return len(self.names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def run_suite(
    ds: Dataset,
    suite: SuiteSpec = SuiteSpec(),
    query: Optional[Dataset] = None,
    threads: Optional[int] = None,
    keep_models: bool = False,
) -> EstimateMatrix:
    """Fit every suite estimator on ``ds`` and evaluate it on ``query``
    (default: the training units). Individual failures are logged and
    their columns omitted; the result is bit-identical for a fixed
    master seed regardless of ``threads``.
    """
    if query is None:
        query = ds
    threads = threads or os.cpu_count() or 1

    # all seed derivation happens up front, in a fixed order, so the
    # schedule of the thread pool cannot influence any estimator's RNG
    root = np.random.SeedSequence(suite.master_seed)
    combos = sorted({(e.base, e.with_cluster) for e in suite.estimators if e.kind in ("T", "MO", "X")})
    children = root.spawn(len(combos) + len(suite.estimators))
    nuisance_seeds = dict(zip(combos, children[: len(combos)]))
    entry_seeds = {e.name: s for e, s in zip(suite.estimators, children[len(combos):])}

    def fit_nm(combo):
        base, flag = combo
        spec = suite.base_spec(base)
        return fit_nuisance(
            ds, spec, spec, clip=suite.clip, include_cluster=flag, seed=nuisance_seeds[combo]
        )

    nms = {}
    nm_failures = {}
    if combos:
        with ThreadPoolExecutor(max_workers=min(threads, len(combos))) as ex:
            for combo, result in ex.map(lambda c: (c, _try(fit_nm, c)), combos):
                if isinstance(result, Exception):
                    nm_failures[combo] = result
                else:
                    nms[combo] = result

    def fit_entry(entry: EstimatorDef):
        seed = entry_seeds[entry.name]
        base = suite.base_spec(entry.base)
        if entry.kind in ("T", "MO", "X"):
            combo = (entry.base, entry.with_cluster)
            if combo in nm_failures:
                raise EstimationError(f"nuisance fit failed: {nm_failures[combo]}")
            nm = nms[combo]
            if entry.kind == "T":
                model = fit_t(ds, base, nm=nm)
            elif entry.kind == "MO":
                model = fit_mo(ds, base, nm, seed=seed)
            else:
                model = fit_x(ds, base, nm, seed=seed)
        elif entry.kind == "S":
            model = fit_s(ds, base, include_cluster=entry.with_cluster, seed=seed)
        elif entry.kind == "R":
            model = fit_r(
                ds, base, include_cluster=entry.with_cluster,
                n_folds=suite.n_folds, clip=suite.clip, seed=seed,
            )
        else:  # CF
            model = fit_causal_forest(
                ds, replace(suite.cf, seed=seed), include_cluster=entry.with_cluster
            )
        return model, model.predict_cate(query)

    results = {}
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for entry, result in ex.map(lambda e: (e, _try(fit_entry, e)), suite.estimators):
            results[entry.name] = result

    names, cols, failures, models = [], [], {}, {}
    for entry in suite.estimators:
        result = results[entry.name]
        if isinstance(result, Exception):
            failures[entry.name] = f"{type(result).__name__}: {result}"
            log.warning("estimator %s failed: %s", entry.name, failures[entry.name])
            continue
        model, col = result
        names.append(entry.name)
        cols.append(col)
        models[entry.name] = model
    if not names:
        raise EstimationError(f"every suite estimator failed: {failures}")
    return EstimateMatrix(
        unit_ids=tuple(query.unit_ids),
        names=tuple(names),
        values=np.column_stack(cols),
        failures=failures,
        master_seed=suite.master_seed,
        models=models if keep_models else None,
    )


def _try(fn, arg):
    try:
        return fn(arg)
    except Exception as exc:  # noqa: BLE001
        return exc


def _sign(a):
    return np.where(np.asarray(a) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class StabilityReport:
    unit_ids: Tuple[str, ...]
    row_min: np.ndarray = field(compare=False)
    row_max: np.ndarray = field(compare=False)
    spread: np.ndarray = field(compare=False)
    std: np.ndarray = field(compare=False)
    median: np.ndarray = field(compare=False)
    sign_agreement: np.ndarray = field(compare=False)
    stable: np.ndarray = field(compare=False)
    spread_threshold: float = 0.0
    summary: Dict[str, float] = field(default_factory=dict, compare=False)


def stability_report(M: EstimateMatrix, spread_threshold: Optional[float] = None) -> StabilityReport:
    """Per-unit agreement statistics across the estimator columns.

    ``spread_threshold`` defaults to the median row spread (flagging the
    more-stable half of units).
    """
    if M.n_estimators < 2:
        raise EstimationError("stability needs at least 2 estimator columns")
    v = M.values
    row_min = v.min(axis=1)
    row_max = v.max(axis=1)
    spread = row_max - row_min
    std = v.std(axis=1)
    median = np.median(v, axis=1)
    agreement = np.mean(_sign(v) == _sign(median)[:, None], axis=1)
    if spread_threshold is None:
        spread_threshold = float(np.median(spread))
    stable = spread <= spread_threshold
    summary = {
        "n_units": float(M.n_units),
        "n_estimators": float(M.n_estimators),
        "spread_threshold": float(spread_threshold),
        "median_spread": float(np.median(spread)),
        "mean_spread": float(np.mean(spread)),
        "max_spread": float(np.max(spread)),
        "frac_stable": float(np.mean(stable)),
        "mean_sign_agreement": float(np.mean(agreement)),
    }
    return StabilityReport(
        unit_ids=M.unit_ids,
        row_min=row_min,
        row_max=row_max,
        spread=spread,
        std=std,
        median=median,
        sign_agreement=agreement,
        stable=stable,
        spread_threshold=float(spread_threshold),
        summary=summary,
    )


TREAT, WITHHOLD, ABSTAIN = "treat", "withhold", "abstain"


@dataclass(frozen=True)
class PolicyDecisions:
    unit_ids: Tuple[str, ...]
    decisions: Tuple[str, ...]
    mode: str
    threshold: float
    row_min: np.ndarray = field(compare=False)
    row_max: np.ndarray = field(compare=False)


def envelope_policy(M: EstimateMatrix, mode: str = "pessimistic", threshold: float = 0.0) -> PolicyDecisions:
    """Per-unit decision from the estimate envelope.

    treat when even the envelope edge the mode cares about clears the
    threshold; abstain whenever min <= threshold < max (the estimators
    disagree about the decision); withhold when no estimate clears it.
    With the universal abstain rule the two modes yield the same
    decisions; the mode is recorded for provenance.
    """
    if mode not in ("pessimistic", "optimistic"):
        raise ConfigError(f"mode must be 'pessimistic' or 'optimistic', got {mode!r}")
    if M.n_estimators < 2:
        raise EstimationError("envelope policy needs at least 2 estimator columns")
    row_min = M.values.min(axis=1)
    row_max = M.values.max(axis=1)
    decisions = np.where(
        row_min > threshold, TREAT, np.where(row_max <= threshold, WITHHOLD, ABSTAIN)
    )
    return PolicyDecisions(
        unit_ids=M.unit_ids,
        decisions=tuple(decisions.tolist()),
        mode=mode,
        threshold=float(threshold),
        row_min=row_min,
        row_max=row_max,
    )
