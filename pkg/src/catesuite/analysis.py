"""Heterogeneity workflow: curves, subgroup contrasts, explore/validate.

The central discipline here is data hygiene. Curves (marginal CATE and
partial dependence) are exploratory and may only ever see the exploration
half of a cluster split; subgroup hypotheses are then scored on the
validation half. ``explore_validate`` wires that protocol together and
asserts it via fit-row provenance on every model.

"Marginal CATE" is not a standard term; here it means the bin-conditional
mean of per-unit estimates: units are grouped into equal-count bins of the
feature (no intervention), and each bin reports the mean estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ate import (
    DEFAULT_B,
    DEFAULT_LEVEL,
    AteEstimate,
    ate_matching,
    cluster_bootstrap_ci,
    match_pairs,
)
from .data import CATEGORICAL, Dataset, effective_cluster_ids
from .errors import ConfigError, EstimationError, ValidationError
from .learners import LearnerSpec, _as_seedseq
from .nuisance import NuisanceModels, fit_nuisance
from .stability import (
    EstimateMatrix,
    StabilityReport,
    SuiteSpec,
    run_suite,
    stability_report,
)

log = logging.getLogger("catesuite.analysis")

OPS = ("<", "<=", ">", ">=", "==", "in")


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    value: object  # number, level string, or collection for "in"

    def __post_init__(self):
        if self.op not in OPS:
            raise ConfigError(f"unknown subgroup op {self.op!r}; expected one of {OPS}")


@dataclass(frozen=True)
class SubgroupDef:
    """Conjunction of conditions over raw (pre-encoding) feature values."""

    conditions: Tuple[Condition, ...]
    label: str = ""

    def __post_init__(self):
        if not self.conditions:
            raise ConfigError("subgroup needs at least one condition")
        if not self.label:
            object.__setattr__(self, "label", " & ".join(self._fmt(c) for c in self.conditions))

    @staticmethod
    def _fmt(c: Condition) -> str:
        if c.op == "in":
            return f"{c.feature} in {{{', '.join(str(v) for v in c.value)}}}"
        return f"{c.feature} {c.op} {c.value}"

    @classmethod
    def where(cls, *triples, label: str = "") -> "SubgroupDef":
        """``SubgroupDef.where(("x1", "<=", 0.0), ("urbanicity", "==", "3"))``"""
        return cls(tuple(Condition(f, op, v) for f, op, v in triples), label=label)

    def mask(self, ds: Dataset) -> np.ndarray:
        out = np.ones(ds.n, dtype=bool)
        for c in self.conditions:
            raw = ds.raw_values(c.feature)  # floats, or level strings if categorical
            if c.op == "in":
                allowed = {str(v) for v in c.value} if raw.dtype == object else {float(v) for v in c.value}
                vals = raw if raw.dtype == object else raw.astype(float)
                hit = np.array([v in allowed for v in vals])
            elif raw.dtype == object:
                if c.op != "==":
                    raise ConfigError(
                        f"categorical feature {c.feature!r} only supports '==' or 'in', got {c.op!r}"
                    )
                hit = raw == str(c.value)
            else:
                v = float(c.value)
                hit = {"<": raw < v, "<=": raw <= v, ">": raw > v, ">=": raw >= v, "==": raw == v}[c.op]
            out &= hit
        return out


# ---------------------------------------------------------------------------
# Curves


@dataclass(frozen=True)
class CurveTable:
    """Long-format curve: one value per (grid point, estimator)."""

    feature: str
    kind: str  # "pdp" | "marginal"
    grid: Tuple[object, ...]  # strictly increasing numbers, or distinct level strings
    estimators: Tuple[str, ...]
    values: np.ndarray = field(compare=False)  # (n_grid, n_estimators)
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("pdp", "marginal"):
            raise ConfigError(f"curve kind must be 'pdp' or 'marginal', got {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.grid), len(self.estimators)):
            raise ValidationError("curve values shape does not match grid/estimator labels")
        if len(set(self.grid)) != len(self.grid):
            raise ValidationError("grid points must be distinct")
        numeric = [g for g in self.grid if not isinstance(g, str)]
        if len(numeric) == len(self.grid) and len(numeric) > 1:
            if not np.all(np.diff(np.asarray(numeric, dtype=float)) > 0):
                raise ValidationError("numeric grid must be strictly increasing")
        object.__setattr__(self, "values", v)

    def to_rows(self):
        """(feature, grid_value, estimator, value, kind) per cell, grid-major."""
        for i, g in enumerate(self.grid):
            for j, name in enumerate(self.estimators):
                yield (self.feature, g, name, float(self.values[i, j]), self.kind)

    def column(self, estimator: str) -> np.ndarray:
        return self.values[:, self.estimators.index(estimator)]


def _named_models(models) -> Tuple[Tuple[str, object], ...]:
    if isinstance(models, Mapping):
        pairs = tuple(models.items())
    else:
        seq = list(models) if isinstance(models, (list, tuple)) else [models]
        pairs = tuple((m.name, m) for m in seq)
    if not pairs:
        raise ConfigError("need at least one model")
    names = [n for n, _ in pairs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate model names {names}; pass a dict with unique keys")
    return pairs


def _grid_code(ds: Dataset, feature: str, value):
    col = ds.column(feature)
    if col.kind == CATEGORICAL:
        v = str(value)
        if v not in col.levels:
            raise ValidationError(f"{v!r} is not a level of {feature!r} (levels: {col.levels})")
        return float(col.levels.index(v))
    return float(value)


def pdp(models, ds: Dataset, feature: str, grid: Sequence) -> CurveTable:
    """Partial dependence of the estimated CATE:
    value(m, v) = (1/n) sum_i tau_m(x_i with ``feature`` set to v)."""
    pairs = _named_models(models)
    if len(grid) == 0:
        raise ConfigError("pdp grid must be nonempty")
    j = ds.column_index(feature)
    col = ds.column(feature)
    grid_out = tuple(str(g) if col.kind == CATEGORICAL else float(g) for g in grid)
    values = np.empty((len(grid), len(pairs)))
    for i, g in enumerate(grid):
        F = ds.features.copy()
        F[:, j] = _grid_code(ds, feature, g)
        ds_mod = ds.with_features(F)
        for k, (_, m) in enumerate(pairs):
            values[i, k] = float(np.mean(m.predict_cate(ds_mod)))
    return CurveTable(feature, "pdp", grid_out, tuple(n for n, _ in pairs), values)


def default_grid(ds: Dataset, feature: str, points: int = 10):
    """Evaluation grid: distinct quantiles for continuous features, the
    level vocabulary for categorical ones."""
    col = ds.column(feature)
    if col.kind == CATEGORICAL:
        return tuple(col.levels)
    v = ds.features[:, ds.column_index(feature)]
    qs = np.quantile(v, np.linspace(0.05, 0.95, max(2, points)))
    return tuple(float(q) for q in np.unique(qs))


def marginal_cate(models, ds: Dataset, feature: str, bins=20) -> CurveTable:
    """Bin-conditional mean of per-unit estimates (no intervention on x).

    Continuous features use ``bins`` equal-count bins (duplicate quantile
    edges collapse); categorical features use their levels. Empty bins are
    dropped and recorded in the table's notes.
    """
    pairs = _named_models(models)
    j = ds.column_index(feature)
    col = ds.column(feature)
    v = ds.features[:, j]
    notes = []

    if col.kind == CATEGORICAL:
        levels = tuple(str(b) for b in bins) if isinstance(bins, (list, tuple)) else col.levels
        members, grid = [], []
        for lv in levels:
            if lv not in col.levels:
                raise ValidationError(f"{lv!r} is not a level of {feature!r}")
            rows = np.flatnonzero(v == col.levels.index(lv))
            if rows.size == 0:
                notes.append(f"level {lv!r} has no units; dropped")
                continue
            members.append(rows)
            grid.append(lv)
    else:
        if not isinstance(bins, int):
            raise ConfigError("continuous features take an integer bin count")
        if bins < 1:
            raise ConfigError("bin count must be >= 1")
        edges = np.unique(np.quantile(v, np.linspace(0.0, 1.0, bins + 1)))
        n_bins = max(1, len(edges) - 1)
        if n_bins < bins:
            notes.append(f"duplicate quantile edges: {bins} bins collapsed to {n_bins}")
        idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)
        members, grid = [], []
        for b in range(n_bins):
            rows = np.flatnonzero(idx == b)
            if rows.size == 0:
                notes.append(f"bin {b} empty; dropped")
                continue
            members.append(rows)
            grid.append(float(np.mean(v[rows])))
    if not members:
        raise ValidationError(f"every bin of {feature!r} is empty")

    preds = np.column_stack([m.predict_cate(ds) for _, m in pairs])
    values = np.empty((len(members), len(pairs)))
    for i, rows in enumerate(members):
        values[i] = preds[rows].mean(axis=0)
    for note in notes:
        log.info("marginal_cate(%s): %s", feature, note)
    return CurveTable(feature, "marginal", tuple(grid), tuple(n for n, _ in pairs), values, tuple(notes))


# ---------------------------------------------------------------------------
# Subgroup contrasts

ROW_ESTIMATORS = ("IPW", "REG", "AIPW")


def _row_signals(ds: Dataset, nm: NuisanceModels, estimator: str) -> np.ndarray:
    """Per-row contribution whose subgroup mean IS the subgroup estimate."""
    mu0, mu1, e = nm.values_for(ds)
    y = ds.outcome
    z = ds.treatment
    if estimator == "IPW":
        return y * z / e - y * (1 - z) / (1.0 - e)
    if estimator == "REG":
        return mu1 - mu0
    if estimator == "AIPW":
        return ((y - mu0) * z / e + (mu1 - y) * (1 - z) / (1.0 - e)) / 2.0
    raise ConfigError(f"estimator must be one of {ROW_ESTIMATORS + ('MATCH',)}, got {estimator!r}")


def _side_rows(ds: Dataset, sdef: SubgroupDef):
    mask = sdef.mask(ds)
    if not mask.any():
        raise EstimationError(f"subgroup {sdef.label!r} selects no units")
    if mask.all():
        raise EstimationError(f"complement of subgroup {sdef.label!r} selects no units")
    return mask


def subgroup_ate(
    ds_validation: Dataset,
    sdef: SubgroupDef,
    estimator: str,
    nm: Optional[NuisanceModels] = None,
    B: int = DEFAULT_B,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
) -> Tuple[AteEstimate, AteEstimate]:
    """ATE inside the subgroup and inside its complement, with
    cluster-bootstrap CIs computed within each side."""
    mask = _side_rows(ds_validation, sdef)
    ss = _as_seedseq(seed).spawn(2)
    if estimator == "MATCH":
        out = []
        for side, rows, child in (("S", np.flatnonzero(mask), ss[0]),
                                  ("complement", np.flatnonzero(~mask), ss[1])):
            sub = ds_validation.subset(rows)
            pairs = match_pairs(sub, sub.feature_names)
            if pairs.n_pairs == 0:
                raise EstimationError(f"no matched pairs on side {side!r} of {sdef.label!r}")
            est = ate_matching(pairs, B=B, level=level, seed=child)
            est = replace(est, diagnostics={**est.diagnostics, "subgroup": sdef.label, "side": side})
            out.append(est)
        return out[0], out[1]
    if nm is None:
        raise ConfigError(f"estimator {estimator!r} needs nuisance models")
    sig = _row_signals(ds_validation, nm, estimator)
    out = []
    for side, rows, child in (("S", np.flatnonzero(mask), ss[0]),
                              ("complement", np.flatnonzero(~mask), ss[1])):
        sub = ds_validation.subset(rows)
        vals = sig[rows]
        lo, hi = cluster_bootstrap_ci(lambda r: float(np.mean(vals[r])), sub, B=B, level=level, seed=child)
        out.append(AteEstimate(estimator, float(np.mean(vals)), level, lo, hi, len(rows),
                               {"subgroup": sdef.label, "side": side}))
    return out[0], out[1]


def _sign(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


@dataclass(frozen=True)
class SubgroupTest:
    label: str
    estimator: str
    delta: float  # point estimate: ATE_S - ATE_complement
    p_value: float
    B: int
    n_flips: int

    def to_dict(self):
        return {"label": self.label, "estimator": self.estimator, "delta": self.delta,
                "p_value": self.p_value, "B": self.B, "n_flips": self.n_flips}


def subgroup_difference_test(
    ds: Dataset,
    sdef: SubgroupDef,
    estimator: str,
    nm: Optional[NuisanceModels] = None,
    B: int = DEFAULT_B,
    seed: int = 0,
) -> SubgroupTest:
    """Two-sided cluster-bootstrap sign-flip test of ATE_S == ATE_complement.

    p = min(1, 2 * fraction of replicates whose difference flips sign
    against the point difference). Replicates that leave a side empty are
    redrawn (capped at B redraws).
    """
    if B < 100:
        raise ConfigError("difference test needs B >= 100 replicates")
    mask = _side_rows(ds, sdef)
    if estimator == "MATCH":
        pairs = match_pairs(ds, ds.feature_names)
        pm = mask[pairs.treated_rows]
        if not pm.any() or pm.all():
            raise EstimationError(f"matched pairs all fall on one side of {sdef.label!r}")
        diffs = pairs.differences
        groups = pairs.pair_clusters
        in_s = pm
    else:
        sig = _row_signals(ds, nm, estimator) if nm is not None else None
        if sig is None:
            raise ConfigError(f"estimator {estimator!r} needs nuisance models")
        diffs = sig
        groups = effective_cluster_ids(ds)
        in_s = mask
    delta = float(np.mean(diffs[in_s]) - np.mean(diffs[~in_s]))
    uniq = np.unique(groups)
    if uniq.size < 2:
        raise ValidationError("difference test needs at least 2 clusters")
    members = [np.flatnonzero(groups == c) for c in uniq]
    rng = np.random.default_rng(_as_seedseq(seed))
    flips = 0
    done = 0
    redraws = 0
    while done < B:
        draw = rng.integers(0, uniq.size, size=uniq.size)
        rows = np.concatenate([members[c] for c in draw])
        m = in_s[rows]
        if not m.any() or m.all():
            redraws += 1
            if redraws >= B:
                raise EstimationError("difference test: replicates keep emptying one side")
            continue
        d_b = float(np.mean(diffs[rows][m]) - np.mean(diffs[rows][~m]))
        if _sign(d_b) != _sign(delta):
            flips += 1
        done += 1
    p = min(1.0, 2.0 * flips / B)
    return SubgroupTest(sdef.label, estimator, delta, p, B, flips)


# ---------------------------------------------------------------------------
# The explore/validate workflow


@dataclass(frozen=True)
class HypothesisResult:
    subgroup: SubgroupDef
    estimate_s: AteEstimate
    estimate_c: AteEstimate
    test: SubgroupTest


@dataclass(frozen=True)
class ExploreValidateReport:
    seed: int
    exploration_ids: Tuple[str, ...]
    validation_ids: Tuple[str, ...]
    matrix: EstimateMatrix  # suite estimates on exploration units
    stability: StabilityReport
    curves: Tuple[CurveTable, ...]
    hypotheses: Tuple[HypothesisResult, ...]
    hygiene: Dict[str, object] = field(default_factory=dict)


def explore_validate(
    ds: Dataset,
    seed: int,
    suite: SuiteSpec = SuiteSpec(),
    hypotheses: Sequence[SubgroupDef] = (),
    estimator: str = "AIPW",
    curve_features: Optional[Sequence[str]] = None,
    pdp_points: int = 10,
    bins: int = 20,
    B: int = DEFAULT_B,
    nuisance_base: LearnerSpec = LearnerSpec.gbt(),
    threads: Optional[int] = None,
) -> ExploreValidateReport:
    """Split clusters, explore on one half, validate hypotheses on the other.

    Curves only ever see the exploration half — the validation rows are
    never passed to any fit or curve call, and every model's fit-row
    provenance is asserted against the exploration ids.
    """
    from .data import cluster_split  # local import keeps module init light

    ss = np.random.SeedSequence(seed)
    ints = ss.generate_state(4)
    split = cluster_split(ds, int(ints[0]))
    ds_e = ds.subset(split.exploration_rows)
    ds_v = ds.subset(split.validation_rows)

    M = run_suite(ds_e, replace(suite, master_seed=int(ints[1])), threads=threads, keep_models=True)
    report = stability_report(M)

    explo = set(ds_e.unit_ids.tolist())
    valid = set(ds_v.unit_ids.tolist())
    for name, model in M.models.items():
        fit_ids = set(model.fit_unit_ids)
        if not fit_ids <= explo or fit_ids & valid:
            raise ValidationError(
                f"hygiene violation: {name} was fit on rows outside the exploration half"
            )
    hygiene = {
        "n_models_checked": len(M.models),
        "all_fits_on_exploration": True,
        "n_exploration": ds_e.n,
        "n_validation": ds_v.n,
    }

    features = tuple(curve_features) if curve_features is not None else ds.feature_names
    curves = []
    models = {name: M.models[name] for name in M.names}
    for f in features:
        curves.append(marginal_cate(models, ds_e, f, bins=bins))
        curves.append(pdp(models, ds_e, f, default_grid(ds_e, f, pdp_points)))

    results = []
    if hypotheses:
        nm_v = None
        if estimator in ROW_ESTIMATORS:
            spawned = np.random.SeedSequence(int(ints[2])).spawn(1)[0]
            nm_v = fit_nuisance(ds_v, nuisance_base, nuisance_base, seed=spawned)
        hyp_seeds = np.random.SeedSequence(int(ints[3])).spawn(2 * len(hypotheses))
        for i, h in enumerate(hypotheses):
            est_s, est_c = subgroup_ate(ds_v, h, estimator, nm_v, B=B, seed=hyp_seeds[2 * i])
            test = subgroup_difference_test(ds_v, h, estimator, nm_v, B=B, seed=hyp_seeds[2 * i + 1])
            results.append(HypothesisResult(h, est_s, est_c, test))

    return ExploreValidateReport(
        seed=seed,
        exploration_ids=tuple(ds_e.unit_ids),
        validation_ids=tuple(ds_v.unit_ids),
        matrix=M,
        stability=report,
        curves=tuple(curves),
        hypotheses=tuple(results),
        hygiene=hygiene,
    )
