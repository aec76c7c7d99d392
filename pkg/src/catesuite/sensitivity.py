"""Sensitivity of the matched-pairs test to hidden bias.

For matched pairs and an odds bound Gamma >= 1, the worst-case chance a
pair's sign is positive is p+ = Gamma / (1 + Gamma). The module bounds the
one-sided p-value of the Wilcoxon signed-rank statistic under that worst
case: exactly (dynamic program over sign assignments, S <= 20 pairs) or by
a continuity-corrected normal approximation.

Zero differences are dropped; tied absolute differences take average
ranks. At Gamma = 1 the exact bound IS the classical one-sided
signed-rank p-value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm, rankdata

from .errors import ConfigError, EstimationError, ValidationError

EXACT_MAX_PAIRS = 20


def _differences(pairs_or_diffs) -> np.ndarray:
    diffs = getattr(pairs_or_diffs, "differences", pairs_or_diffs)
    diffs = np.asarray(diffs, dtype=np.float64).ravel()
    if diffs.size == 0:
        raise ValidationError("need at least one pair difference")
    if not np.all(np.isfinite(diffs)):
        raise ValidationError("pair differences must be finite")
    return diffs


def _signed_rank_parts(diffs):
    """Drop zeros, average-rank the absolute values, return
    (doubled integer ranks, doubled observed T+)."""
    nz = diffs[diffs != 0]
    if nz.size == 0:
        raise EstimationError("all pair differences are zero; the signed-rank test is undefined")
    ranks = rankdata(np.abs(nz), method="average")
    # average ranks are multiples of 1/2, so doubling gives exact integers
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    t2 = int(np.rint(2.0 * float(np.sum(ranks[nz > 0]))))
    return r2, t2, nz.size


def _exact_upper_p(r2, t2, p_plus):
    """P(T+ >= observed) when each pair is positive independently with
    probability p_plus, via convolution over the doubled-rank sums."""
    total = int(r2.sum())
    dp = np.zeros(total + 1)
    dp[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(dp)
        shifted[r:] = dp[: total + 1 - r]
        dp = dp * (1.0 - p_plus) + shifted * p_plus
    return float(dp[t2:].sum())


def _normal_upper_p(r2, t2, p_plus):
    r = r2 / 2.0
    t = t2 / 2.0
    mean = p_plus * r.sum()
    var = p_plus * (1.0 - p_plus) * np.sum(r**2)
    zscore = (t - 0.5 - mean) / np.sqrt(var)
    return float(norm.sf(zscore))


def sensitivity_bound(pairs_or_diffs, gamma: float, exact: bool = True) -> float:
    """Worst-case (upper bound) one-sided p-value at odds bound ``gamma``."""
    if gamma < 1.0:
        raise ConfigError("gamma must be >= 1")
    diffs = _differences(pairs_or_diffs)
    r2, t2, s = _signed_rank_parts(diffs)
    if exact and s > EXACT_MAX_PAIRS:
        raise ConfigError(
            f"exact mode enumerates sign assignments and is limited to "
            f"{EXACT_MAX_PAIRS} nonzero pairs; got {s} (use exact=False)"
        )
    p_plus = gamma / (1.0 + gamma)
    if exact:
        return min(1.0, _exact_upper_p(r2, t2, p_plus))
    return min(1.0, max(0.0, _normal_upper_p(r2, t2, p_plus)))


@dataclass(frozen=True)
class SensitivityResult:
    gammas: Tuple[float, ...]
    p_values: Tuple[float, ...]
    gamma_star: Optional[float]  # largest grid Gamma still significant
    gamma_lower: Optional[float]  # 1 / gamma_star
    alpha: float
    statistic: str
    mode: str  # "exact" or "normal"

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "statistic": self.statistic,
            "mode": self.mode,
            "gamma_star": self.gamma_star,
            "gamma_lower": self.gamma_lower,
            "grid": [{"gamma": g, "p_upper": p} for g, p in zip(self.gammas, self.p_values)],
        }


DEFAULT_GAMMA_GRID = tuple(np.round(np.arange(1.0, 3.01, 0.05), 10))


def gamma_star(
    pairs_or_diffs,
    alpha: float = 0.05,
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    exact: Optional[bool] = None,
) -> SensitivityResult:
    """Evaluate the worst-case p over a Gamma grid and report the largest
    grid value that stays significant (None if already insignificant at 1).

    ``exact=None`` picks the exact mode when it is feasible (<= 20 nonzero
    pairs) and the normal bound otherwise.
    """
    grid = tuple(float(g) for g in grid)
    if not grid or abs(grid[0] - 1.0) > 1e-12:
        raise ConfigError("gamma grid must start at 1")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("gamma grid must be strictly ascending")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must be in (0, 1)")
    diffs = _differences(pairs_or_diffs)
    _, _, s = _signed_rank_parts(diffs)
    if exact is None:
        exact = s <= EXACT_MAX_PAIRS
    ps = tuple(sensitivity_bound(diffs, g, exact=exact) for g in grid)
    star = None
    for g, p in zip(grid, ps):
        if p < alpha:
            star = g
        else:
            break  # p is nondecreasing in gamma
    return SensitivityResult(
        gammas=grid,
        p_values=ps,
        gamma_star=star,
        gamma_lower=None if star is None else 1.0 / star,
        alpha=alpha,
        statistic="wilcoxon-signed-rank",
        mode="exact" if exact else "normal",
    )
