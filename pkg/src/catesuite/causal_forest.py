"""Honest causal forest: trees whose leaves carry difference-in-means
treatment-effect estimates.

Each tree draws an arm-stratified subsample, splits it into a structure
half (which greedily chooses splits maximizing n_L * n_R * (tau_L - tau_R)^2)
and an estimation half (which supplies every leaf's difference-in-means
value). Per-arm leaf minimums are enforced in both halves so every leaf
value is defined. The forest predicts the mean over trees.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _tree_core as tc
from .data import Dataset, encode
from .errors import ConfigError, EstimationError
from .learners import _as_seedseq, _check_query, _resolve_mtry
from .metalearners import CateModel

DEFAULT_MIN_LEAF = 5


@dataclass(frozen=True)
class CausalForestSpec:
    n_trees: int = 500
    min_leaf_treated: int = DEFAULT_MIN_LEAF
    min_leaf_control: int = DEFAULT_MIN_LEAF
    mtry: Optional[float] = None  # None -> ceil(d/3); a float in (0,1) is a fraction of d
    subsample: float = 0.5
    honest: bool = True
    honesty_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_leaf_treated < 2 or self.min_leaf_control < 2:
            raise ConfigError("per-arm leaf minimums must each be >= 2")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample fraction must be in (0, 1]")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise ConfigError("honesty split fraction must be in (0, 1)")


class CFCate(CateModel):
    kind = "CF"

    def __init__(self, trees, spec, n_features_in, plan=None, with_cluster=False, fit_unit_ids=()):
        super().__init__(plan, "forest", with_cluster, fit_unit_ids)
        self._trees = trees  # list of (node arrays, estimation row indices)
        self.spec = spec
        self.n_features_in = n_features_in

    @property
    def trees(self):
        return self._trees

    def _cate_from_encoded(self, X):
        X = _check_query(X, self.n_features_in)
        acc = np.zeros(X.shape[0])
        for arrays, _ in self._trees:
            f, t, l, r, v, _n = arrays
            acc += tc.predict_tree(f, t, l, r, v, X)
        return acc / len(self._trees)


def _stratified_draw(rng, rows, fraction):
    k = max(1, int(round(fraction * len(rows))))
    return rng.choice(rows, size=min(k, len(rows)), replace=False)


def _grow_one(X, y, z, spec, mtry, seed):
    rng = np.random.default_rng(seed)
    treated = np.flatnonzero(z == 1)
    control = np.flatnonzero(z == 0)
    sub1 = _stratified_draw(rng, treated, spec.subsample)
    sub0 = _stratified_draw(rng, control, spec.subsample)
    if spec.honest:
        sub1 = sub1[rng.permutation(len(sub1))]
        sub0 = sub0[rng.permutation(len(sub0))]
        c1 = int(round(spec.honesty_fraction * len(sub1)))
        c0 = int(round(spec.honesty_fraction * len(sub0)))
        struct_rows = np.concatenate([sub1[:c1], sub0[:c0]])
        est_rows = np.concatenate([sub1[c1:], sub0[c0:]])
    else:
        struct_rows = np.concatenate([sub1, sub0])
        est_rows = struct_rows
    est_t = int(np.sum(z[est_rows] == 1))
    est_c = int(np.sum(z[est_rows] == 0))
    if est_t < spec.min_leaf_treated or est_c < spec.min_leaf_control:
        raise EstimationError(
            "causal forest spec is infeasible for this data size: the estimation "
            f"half has {est_t} treated / {est_c} control rows but the root leaf "
            f"needs >= {spec.min_leaf_treated}/{spec.min_leaf_control}"
        )
    X_s = np.ascontiguousarray(X[struct_rows])
    X_e = np.ascontiguousarray(X[est_rows])
    ns = len(struct_rows)
    min_arm = min(spec.min_leaf_treated, spec.min_leaf_control)
    max_nodes = 2 * max(1, ns // max(2 * min_arm, 1)) + 3
    pool = rng.integers(0, np.iinfo(np.int64).max, size=max_nodes * mtry, dtype=np.uint64)
    arrays = tc.grow_causal_tree(
        X_s, y[struct_rows], z[struct_rows],
        X_e, y[est_rows], z[est_rows],
        spec.min_leaf_treated, spec.min_leaf_control, mtry, pool,
    )
    return arrays, est_rows


def fit_causal_forest(
    ds: Dataset,
    spec: CausalForestSpec = CausalForestSpec(),
    include_cluster: bool = False,
    threads: int = 1,
) -> CFCate:
    X, plan = encode(ds, include_cluster=include_cluster)
    y = ds.outcome
    z = ds.treatment
    d = X.shape[1]
    mtry = _resolve_mtry(spec.mtry, d, default=math.ceil(d / 3))
    seeds = _as_seedseq(spec.seed).spawn(spec.n_trees)

    def grow(i):
        return _grow_one(X, y, z, spec, mtry, seeds[i])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            trees = list(ex.map(grow, range(spec.n_trees)))
    else:
        trees = [grow(i) for i in range(spec.n_trees)]
    return CFCate(trees, spec, d, plan=plan, with_cluster=include_cluster,
                  fit_unit_ids=tuple(ds.unit_ids))
