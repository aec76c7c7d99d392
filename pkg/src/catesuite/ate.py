"""Average-treatment-effect estimators with cluster-bootstrap intervals.

Four estimators: inverse probability weighting (IPW), outcome regression
(REG), the augmented IPW combination (AIPW), and within-cluster matching
(MATCH). Intervals come from resampling whole clusters with replacement
and taking percentile bounds.

A note on AIPW: the implemented estimand is
    (1/2n) * sum( [Y - mu0]Z/e + [mu1 - Y](1-Z)/(1-e) ),
i.e. the average of the two augmented arm corrections, NOT the canonical
efficient-influence-function form (REG plus weighted residuals). The two
coincide when the nuisances are exact; with estimated nuisances they can
differ, and this module intentionally keeps the averaged form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, effective_cluster_ids
from .errors import ConfigError, EstimationError, ValidationError
from .learners import _as_seedseq
from .nuisance import NuisanceModels

log = logging.getLogger("catesuite.ate")

DEFAULT_B = 2000
DEFAULT_LEVEL = 0.95


@dataclass(frozen=True)
class AteEstimate:
    tag: str  # IPW | REG | AIPW | MATCH
    point: float
    level: float
    lo: float
    hi: float
    n: int
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return {
            "tag": self.tag,
            "point": self.point,
            "ci_lo": self.lo,
            "ci_hi": self.hi,
            "level": self.level,
            "n": self.n,
            "diagnostics": dict(self.diagnostics),
        }


def cluster_bootstrap_ci(
    statistic: Callable[[np.ndarray], float],
    ds: Dataset,
    B: int = DEFAULT_B,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
) -> Tuple[float, float]:
    """Percentile CI for ``statistic(row_indices)`` under cluster resampling.

    Clusters are drawn with replacement (units within a drawn cluster kept
    intact) and the statistic is recomputed on the concatenated rows. A
    replicate on which the statistic raises is redrawn; after B total
    failures the bootstrap aborts.
    """
    if B < 100:
        raise ConfigError("bootstrap needs B >= 100 replicates")
    if not 0.0 < level < 1.0:
        raise ConfigError("confidence level must be in (0, 1)")
    clusters = effective_cluster_ids(ds)
    uniq = np.unique(clusters)
    if uniq.size < 2:
        raise ValidationError("cluster bootstrap needs at least 2 clusters")
    members = [np.flatnonzero(clusters == c) for c in uniq]
    rng = np.random.default_rng(_as_seedseq(seed))
    stats = np.empty(B)
    failures = 0
    i = 0
    while i < B:
        draw = rng.integers(0, uniq.size, size=uniq.size)
        rows = np.concatenate([members[c] for c in draw])
        try:
            stats[i] = statistic(rows)
        except Exception as exc:  # noqa: BLE001 - replicate-level failures are redrawn
            failures += 1
            if failures >= B:
                raise EstimationError(
                    f"cluster bootstrap: {failures} failed replicates (last: {exc})"
                ) from exc
            continue
        i += 1
    alpha = 1.0 - level
    lo, hi = np.quantile(stats, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def _bootstrap_mean_ci(values, ds, B, level, seed):
    values = np.asarray(values, dtype=np.float64)
    return cluster_bootstrap_ci(lambda rows: float(np.mean(values[rows])), ds, B=B, level=level, seed=seed)


def ate_ipw(ds: Dataset, nm: NuisanceModels, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=0) -> AteEstimate:
    """(1/n) sum( Y Z / e-hat  -  Y (1-Z) / (1 - e-hat) )."""
    _, _, e = nm.values_for(ds)
    y = ds.outcome
    z = ds.treatment
    psi = y * z / e - y * (1 - z) / (1.0 - e)
    lo, hi = _bootstrap_mean_ci(psi, ds, B, level, seed)
    return AteEstimate("IPW", float(np.mean(psi)), level, lo, hi, ds.n,
                       {"e_min": float(e.min()), "e_max": float(e.max())})


def ate_regression(ds: Dataset, nm: NuisanceModels, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=0) -> AteEstimate:
    """(1/n) sum( mu1-hat(x) - mu0-hat(x) )."""
    mu0, mu1, _ = nm.values_for(ds)
    delta = mu1 - mu0
    lo, hi = _bootstrap_mean_ci(delta, ds, B, level, seed)
    return AteEstimate("REG", float(np.mean(delta)), level, lo, hi, ds.n, {})


def ate_aipw(ds: Dataset, nm: NuisanceModels, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=0) -> AteEstimate:
    """(1/2n) sum( [Y - mu0]Z/e + [mu1 - Y](1-Z)/(1-e) ); see module note."""
    mu0, mu1, e = nm.values_for(ds)
    y = ds.outcome
    z = ds.treatment
    phi = (y - mu0) * z / e + (mu1 - y) * (1 - z) / (1.0 - e)
    half = phi / 2.0
    lo, hi = _bootstrap_mean_ci(half, ds, B, level, seed)
    return AteEstimate("AIPW", float(np.mean(half)), level, lo, hi, ds.n, {})


@dataclass(frozen=True)
class MatchedPairs:
    treated_rows: np.ndarray
    control_rows: np.ndarray
    differences: np.ndarray  # Y_treated - Y_control per pair
    pair_clusters: np.ndarray  # cluster id per pair
    metric: Dict[str, object]
    n_dropped: int  # treated units with no in-cluster control

    @property
    def n_pairs(self):
        return len(self.differences)


def match_pairs(ds: Dataset, feature_names: Sequence[str]) -> MatchedPairs:
    """Match each treated unit to its nearest same-cluster control
    (Mahalanobis distance on the named features, with replacement).

    Ties break toward the lowest control row index. Treated units in
    clusters with no control are dropped and counted. A singular pooled
    covariance falls back to a diagonal (per-feature variance) metric.
    """
    if not feature_names:
        raise ConfigError("matching needs at least one feature name")
    idx = [ds.column_index(name) for name in feature_names]
    F = ds.features[:, idx]
    cov = np.cov(F, rowvar=False)
    cov = np.atleast_2d(cov)
    metric: Dict[str, object] = {"features": list(feature_names)}
    try:
        VI = np.linalg.inv(cov)
        # reject numerically meaningless inverses
        if not np.all(np.isfinite(VI)) or np.linalg.cond(cov) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        metric["type"] = "mahalanobis"
    except np.linalg.LinAlgError:
        var = np.var(F, axis=0)
        var[var == 0] = 1.0
        VI = np.diag(1.0 / var)
        metric["type"] = "diagonal"
        log.warning("matching: covariance singular, using diagonal metric")
    clusters = effective_cluster_ids(ds)
    z = ds.treatment
    t_rows, c_rows, diffs, pair_cl = [], [], [], []
    n_dropped = 0
    for c in np.unique(clusters):
        rows = np.flatnonzero(clusters == c)
        tr = rows[z[rows] == 1]
        co = rows[z[rows] == 0]
        if len(tr) == 0:
            continue
        if len(co) == 0:
            n_dropped += len(tr)
            continue
        delta = F[tr][:, None, :] - F[co][None, :, :]  # (nt, nc, k)
        d2 = np.einsum("tck,kl,tcl->tc", delta, VI, delta)
        best = np.argmin(d2, axis=1)  # first minimum -> lowest row index (co sorted)
        for a, b in zip(tr, co[best]):
            t_rows.append(a)
            c_rows.append(b)
            diffs.append(ds.outcome[a] - ds.outcome[b])
            pair_cl.append(c)
    if n_dropped:
        log.info("matching: dropped %d treated unit(s) with no in-cluster control", n_dropped)
    return MatchedPairs(
        treated_rows=np.asarray(t_rows, dtype=np.int64),
        control_rows=np.asarray(c_rows, dtype=np.int64),
        differences=np.asarray(diffs, dtype=np.float64),
        pair_clusters=np.asarray(pair_cl, dtype=object),
        metric=metric,
        n_dropped=n_dropped,
    )


def ate_matching(pairs: MatchedPairs, B=DEFAULT_B, level=DEFAULT_LEVEL, seed=0) -> AteEstimate:
    """Mean matched-pair difference; CI by resampling clusters of pairs.

    Because treated units are the ones matched, this estimates the effect
    on the treated; under randomized assignment it coincides with the ATE.
    """
    if pairs.n_pairs == 0:
        raise EstimationError("no matched pairs to estimate from")
    point = float(np.mean(pairs.differences))
    uniq = np.unique(pairs.pair_clusters)
    if uniq.size < 2:
        raise ValidationError("matching bootstrap needs pairs from at least 2 clusters")
    members = [np.flatnonzero(pairs.pair_clusters == c) for c in uniq]
    rng = np.random.default_rng(_as_seedseq(seed))
    if B < 100:
        raise ConfigError("bootstrap needs B >= 100 replicates")
    stats = np.empty(B)
    for i in range(B):
        draw = rng.integers(0, uniq.size, size=uniq.size)
        rows = np.concatenate([members[c] for c in draw])
        stats[i] = np.mean(pairs.differences[rows])
    alpha = 1.0 - level
    lo, hi = np.quantile(stats, [alpha / 2.0, 1.0 - alpha / 2.0])
    return AteEstimate(
        "MATCH", point, level, float(lo), float(hi), int(pairs.n_pairs),
        {"n_pairs": int(pairs.n_pairs), "n_dropped": int(pairs.n_dropped),
         "metric": dict(pairs.metric)},
    )
