"""Regression learners: trees, forests, boosting, kNN, and ridge.

Every fitted model exposes ``predict(X) -> (n,) float64``. Fitting goes
through :func:`fit_learner`, which dispatches on a :class:`LearnerSpec`.
All learners accept nonnegative sample weights and are deterministic given
``(spec, X, y, w, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Tuple

import numpy as np

from . import _tree_core as tc
from .errors import ConfigError, ValidationError

_FAMILIES = ("tree", "forest", "gbt", "knn", "ridge")


class Model(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LearnerSpec:
    """Value object naming a learner family plus hyperparameters."""

    family: str
    params: Tuple[Tuple[str, object], ...] = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown learner family {self.family!r}")

    def param(self, name, default=None):
        for k, v in self.params:
            if k == name:
                return v
        return default

    def to_dict(self):
        return {"family": self.family, **{k: v for k, v in self.params}}

    @classmethod
    def tree(cls, max_depth=None, min_leaf=5, mtry=None):
        return cls("tree", (("max_depth", max_depth), ("min_leaf", int(min_leaf)), ("mtry", mtry)))

    @classmethod
    def forest(cls, n_trees=500, mtry=None, min_leaf=5, honest=False, max_depth=None):
        return cls(
            "forest",
            (
                ("n_trees", int(n_trees)),
                ("mtry", mtry),
                ("min_leaf", int(min_leaf)),
                ("honest", bool(honest)),
                ("max_depth", max_depth),
            ),
        )

    @classmethod
    def gbt(cls, n_rounds=200, learning_rate=0.1, max_depth=3, min_leaf=10):
        return cls(
            "gbt",
            (
                ("n_rounds", int(n_rounds)),
                ("learning_rate", float(learning_rate)),
                ("max_depth", int(max_depth)),
                ("min_leaf", int(min_leaf)),
            ),
        )

    @classmethod
    def knn(cls, k=10):
        return cls("knn", (("k", int(k)),))

    @classmethod
    def ridge(cls, lam=1.0):
        return cls("ridge", (("lam", float(lam)),))


def _check_xy(X, y, w):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise ValidationError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[1] == 0:
        raise ValidationError("X must have at least one column")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if w is None:
        w = np.ones(X.shape[0])
    else:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape[0] != X.shape[0]:
            raise ValidationError("weights length does not match X")
        if np.any(w < 0):
            raise ValidationError("weights must be nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValidationError("X, y, and weights must be finite")
    if w.sum() <= 0:
        raise ValidationError("weights must not all be zero")
    return X, y, w


def _rand_pool(rng, n, min_leaf, mtry):
    max_nodes = 2 * max(1, n // max(min_leaf, 1)) + 3
    return rng.integers(0, np.iinfo(np.int64).max, size=max_nodes * mtry, dtype=np.uint64)


def _resolve_mtry(mtry, d, default):
    if mtry is None:
        m = default
    elif isinstance(mtry, float) and 0.0 < mtry < 1.0:
        # fraction of available features, rounded up
        m = math.ceil(mtry * d)
    else:
        m = int(mtry)
    if not 1 <= m <= d:
        raise ConfigError(f"mtry must be in [1, {d}], got {m}")
    return m


def _depth_code(max_depth):
    if max_depth is None:
        return -1
    md = int(max_depth)
    if md < 0:
        raise ConfigError("max_depth must be nonnegative or None")
    return md


def _check_query(X, d):
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != d:
        raise ValidationError(
            f"query matrix must have {d} columns to match the training signature, got shape {X.shape}"
        )
    return X


class FunctionModel:
    """Wrap a plain function of X as a fitted model.

    Used to inject known ground-truth surfaces (or any precomputed rule)
    wherever a fitted model is expected.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self._fn = fn

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.asarray(self._fn(X), dtype=np.float64).ravel()
        if out.shape[0] != X.shape[0]:
            raise ValidationError("FunctionModel produced wrong-length output")
        return out


class ConstantModel:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.value)


class TreeModel:
    def __init__(self, arrays, n_features_in):
        self._arrays = arrays
        self.n_features_in = n_features_in

    @property
    def n_nodes(self):
        return self._arrays[5]

    def predict(self, X):
        X = _check_query(X, self.n_features_in)
        f, t, l, r, v, _ = self._arrays
        return tc.predict_tree(f, t, l, r, v, X)


class ForestModel:
    def __init__(self, trees, honest, n_features_in):
        self._trees = trees
        self.honest = honest
        self.n_features_in = n_features_in

    @property
    def n_trees(self):
        return len(self._trees)

    def predict(self, X):
        X = _check_query(X, self.n_features_in)
        acc = np.zeros(X.shape[0])
        for f, t, l, r, v, _ in self._trees:
            acc += tc.predict_tree(f, t, l, r, v, X)
        return acc / len(self._trees)


class GbtModel:
    def __init__(self, f0, learning_rate, trees, n_features_in):
        self.f0 = f0
        self.learning_rate = learning_rate
        self._trees = trees
        self.n_features_in = n_features_in

    def predict(self, X):
        X = _check_query(X, self.n_features_in)
        out = np.full(X.shape[0], self.f0)
        for f, t, l, r, v, _ in self._trees:
            out += self.learning_rate * tc.predict_tree(f, t, l, r, v, X)
        return out


class KnnModel:
    def __init__(self, Xs, y, w, mean, std, k):
        self._Xs, self._y, self._w = Xs, y, w
        self._mean, self._std = mean, std
        self.k = k
        self.n_features_in = Xs.shape[1]

    def predict(self, X):
        X = _check_query(X, self.n_features_in)
        Q = (X - self._mean) / self._std
        n = self._Xs.shape[0]
        k = min(self.k, n)
        out = np.empty(Q.shape[0])
        for start in range(0, Q.shape[0], 512):
            block = Q[start : start + 512]
            d2 = ((block[:, None, :] - self._Xs[None, :, :]) ** 2).sum(axis=2)
            for i in range(block.shape[0]):
                order = np.argsort(d2[i], kind="stable")[:k]
                wk = self._w[order]
                if wk.sum() <= 0:
                    out[start + i] = self._y[order].mean()
                else:
                    out[start + i] = np.average(self._y[order], weights=wk)
        return out


class RidgeModel:
    def __init__(self, mean, std, keep, beta, intercept, n_features_in):
        self._mean, self._std = mean, std
        self._keep = keep
        self.beta = beta
        self.intercept = intercept
        self.n_features_in = n_features_in

    def predict(self, X):
        X = _check_query(X, self.n_features_in)
        Xs = (X[:, self._keep] - self._mean) / self._std
        return Xs @ self.beta + self.intercept


def _weighted_standardizer(X, w):
    wn = w / w.sum()
    mean = wn @ X
    var = wn @ (X - mean) ** 2
    std = np.sqrt(var)
    std[std == 0] = 1.0
    return mean, std


def _fit_tree(spec, X, y, w, rng):
    n, d = X.shape
    min_leaf = int(spec.param("min_leaf", 5))
    if min_leaf < 1:
        raise ConfigError("min_leaf must be >= 1")
    mtry = _resolve_mtry(spec.param("mtry"), d, default=d)
    depth = _depth_code(spec.param("max_depth"))
    pool = _rand_pool(rng, n, min_leaf, mtry)
    return TreeModel(tc.grow_regression_tree(X, y, w, depth, min_leaf, mtry, pool), d)


def _honest_leaf_values(arrays, X_est, y_est, w_est):
    """Replace leaf values with estimation-half weighted means (fallback:
    keep the structure-half value for leaves no estimation row reaches)."""
    f, t, l, r, v, n_nodes = arrays
    v = v.copy()
    leaves = tc.leaf_of(f, t, l, r, X_est)
    wsum = np.zeros(n_nodes)
    wysum = np.zeros(n_nodes)
    np.add.at(wsum, leaves, w_est)
    np.add.at(wysum, leaves, w_est * y_est)
    ok = wsum > 0
    v[ok] = wysum[ok] / wsum[ok]
    return f, t, l, r, v, n_nodes


def _fit_forest(spec, X, y, w, rng):
    n, d = X.shape
    n_trees = int(spec.param("n_trees", 500))
    if n_trees < 1:
        raise ConfigError("n_trees must be >= 1")
    min_leaf = int(spec.param("min_leaf", 5))
    mtry = _resolve_mtry(spec.param("mtry"), d, default=math.ceil(d / 3))
    depth = _depth_code(spec.param("max_depth"))
    honest = bool(spec.param("honest", False))
    trees = []
    for _ in range(n_trees):
        if honest:
            idx = rng.integers(0, n, size=n)
            idx = idx[rng.permutation(n)]
            half = n // 2
            s, e = idx[:half], idx[half:]
            if len(s) < 1 or len(e) < 1:
                raise ValidationError("not enough rows for an honest split")
            pool = _rand_pool(rng, len(s), min_leaf, mtry)
            arrays = tc.grow_regression_tree(X[s], y[s], w[s], depth, min_leaf, mtry, pool)
            arrays = _honest_leaf_values(arrays, np.ascontiguousarray(X[e]), y[e], w[e])
        else:
            pool = _rand_pool(rng, n, min_leaf, mtry)
            arrays = tc.grow_regression_tree(X, y, w, depth, min_leaf, mtry, pool)
        trees.append(arrays)
    return ForestModel(trees, honest, d)


def _fit_gbt(spec, X, y, w, rng):
    n, d = X.shape
    n_rounds = int(spec.param("n_rounds", 200))
    if n_rounds < 0:
        raise ConfigError("n_rounds must be >= 0")
    lr = float(spec.param("learning_rate", 0.1))
    if not 0 < lr <= 1:
        raise ConfigError("learning_rate must be in (0, 1]")
    depth = int(spec.param("max_depth", 3))
    min_leaf = int(spec.param("min_leaf", 10))
    f0 = np.average(y, weights=w)
    resid = y - f0
    trees = []
    for _ in range(n_rounds):
        pool = _rand_pool(rng, n, min_leaf, d)
        arrays = tc.grow_regression_tree(X, resid, w, depth, min_leaf, d, pool)
        f, t, l, r, v, _ = arrays
        resid -= lr * tc.predict_tree(f, t, l, r, v, X)
        trees.append(arrays)
    return GbtModel(f0, lr, trees, d)


def _fit_knn(spec, X, y, w, rng):
    k = int(spec.param("k", 10))
    if k < 1:
        raise ConfigError("k must be >= 1")
    mean, std = _weighted_standardizer(X, w)
    return KnnModel((X - mean) / std, y.copy(), w.copy(), mean, std, k)


def _fit_ridge(spec, X, y, w, rng):
    lam = float(spec.param("lam", 1.0))
    if lam < 0:
        raise ConfigError("lam must be >= 0")
    n, d = X.shape
    # merge exactly duplicated columns so a copied feature cannot dilute
    # the penalty and shift predictions
    seen = {}
    keep = []
    for j in range(d):
        key = np.ascontiguousarray(X[:, j]).tobytes()
        if key not in seen:
            seen[key] = j
            keep.append(j)
    keep = np.asarray(keep, dtype=np.int64)
    mean, std = _weighted_standardizer(X[:, keep], w)
    Xk = (X[:, keep] - mean) / std
    wn = w / w.mean()
    ybar = np.average(y, weights=wn)
    xbar = (wn / wn.sum()) @ Xk
    Xc = Xk - xbar
    yc = y - ybar
    if lam == 0.0:
        sw = np.sqrt(wn)
        beta, *_ = np.linalg.lstsq(Xc * sw[:, None], yc * sw, rcond=None)
    else:
        A = (Xc * wn[:, None]).T @ Xc / n + lam * np.eye(len(keep))
        b = (Xc * wn[:, None]).T @ yc / n
        beta = np.linalg.solve(A, b)
    intercept = ybar - xbar @ beta
    return RidgeModel(mean, std, keep, beta, intercept, d)


_FITTERS = {
    "tree": _fit_tree,
    "forest": _fit_forest,
    "gbt": _fit_gbt,
    "knn": _fit_knn,
    "ridge": _fit_ridge,
}


def _as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def fit_learner(spec: LearnerSpec, X, y, w=None, seed=0) -> Model:
    """Fit ``spec`` to (X, y) with optional nonnegative sample weights.

    ``seed`` may be an int or a numpy SeedSequence.
    """
    X, y, w = _check_xy(X, y, w)
    rng = np.random.default_rng(_as_seedseq(seed))
    return _FITTERS[spec.family](spec, X, y.copy(), w, rng)


@dataclass(frozen=True)
class CrossFitPlan:
    """Fold assignment for cross-fitting; whole clusters share a fold."""

    n_folds: int
    fold_of_row: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fold_of_row", np.asarray(self.fold_of_row, dtype=np.int64))
        if self.n_folds < 2:
            raise ConfigError("cross-fitting needs at least 2 folds")
        present = np.unique(self.fold_of_row)
        if present.size != self.n_folds or present[0] != 0 or present[-1] != self.n_folds - 1:
            raise ValidationError("every fold must contain at least one row")

    @classmethod
    def build(cls, cluster_ids, n_folds, seed):
        """Assign clusters to folds: shuffle, sort by size (desc, stable),
        then greedily place each cluster in the currently smallest fold."""
        if n_folds < 2:
            raise ConfigError("cross-fitting needs at least 2 folds")
        cluster_ids = np.asarray(cluster_ids)
        uniq, inverse, counts = np.unique(cluster_ids, return_inverse=True, return_counts=True)
        if uniq.size < n_folds:
            raise ValidationError(
                f"need at least {n_folds} clusters for {n_folds}-fold cross-fitting, have {uniq.size}"
            )
        rng = np.random.default_rng(_as_seedseq(seed))
        order = rng.permutation(uniq.size)
        order = order[np.argsort(-counts[order], kind="stable")]
        fold_rows = np.zeros(n_folds, dtype=np.int64)
        fold_of_cluster = np.empty(uniq.size, dtype=np.int64)
        for c in order:
            f = int(np.argmin(fold_rows))
            fold_of_cluster[c] = f
            fold_rows[f] += counts[c]
        return cls(n_folds=int(n_folds), fold_of_row=fold_of_cluster[inverse])

    def train_rows(self, fold):
        return np.flatnonzero(self.fold_of_row != fold)

    def test_rows(self, fold):
        return np.flatnonzero(self.fold_of_row == fold)


def cross_fit_predict(spec: LearnerSpec, X, y, plan: CrossFitPlan, w=None, seed=0):
    """Out-of-fold predictions: row i is predicted by the model fit on the
    folds that do not contain i."""
    X, y, w = _check_xy(X, y, w)
    if plan.fold_of_row.shape[0] != X.shape[0]:
        raise ValidationError("plan does not match the number of rows")
    seeds = _as_seedseq(seed).spawn(plan.n_folds)
    out = np.empty(X.shape[0])
    for fold in range(plan.n_folds):
        tr = plan.train_rows(fold)
        te = plan.test_rows(fold)
        model = _FITTERS[spec.family](
            spec,
            np.ascontiguousarray(X[tr]),
            y[tr].copy(),
            w[tr],
            np.random.default_rng(seeds[fold]),
        )
        out[te] = model.predict(X[te])
    return out
