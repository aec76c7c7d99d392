"""Synthetic data-generating processes with known ground truth.

Each named generator samples a clustered observational (or randomized)
study and returns the :class:`~catesuite.data.Dataset` together with a
:class:`TruthHandle` exposing the true ``tau``, ``e``, ``mu0``, ``mu1``
surfaces as callables on the raw feature matrix.

All six DGPs carry a cluster column so cluster-level operations (matching,
bootstrap, exploration/validation splits) work on any of them; the
non-school DGPs default to zero cluster effect, making the clusters inert.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .data import CATEGORICAL, CONTINUOUS, Column, Dataset
from .errors import ConfigError, ValidationError

DGP_NAMES = (
    "constant_effect",
    "linear_tau",
    "goldilocks",
    "confounded",
    "unbalanced_arms",
    "clustered_school",
)


@dataclass(frozen=True)
class DgpSpec:
    name: str
    n: int = 2000
    d: Optional[int] = None  # total feature count; None -> per-name default
    noise_sd: float = 0.5
    n_clusters: int = 20
    cluster_sd: float = 0.0
    seed: int = 0
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ConfigError(f"unknown DGP {self.name!r}; choose one of {DGP_NAMES}")
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if self.noise_sd < 0:
            raise ConfigError("noise sd must be >= 0")
        if self.n_clusters < 2:
            raise ConfigError("need at least 2 clusters")
        if self.cluster_sd < 0:
            raise ConfigError("cluster-effect sd must be >= 0")

    def param(self, name, default):
        for k, v in self.params:
            if k == name:
                return float(v)
        return float(default)


@dataclass(frozen=True)
class TruthHandle:
    """Callable ground truth for one generated dataset.

    ``tau``, ``e``, ``mu0``, ``mu1`` take the raw (pre-encoding) feature
    matrix in dataset column order. ``sample_ate`` is the realized mean of
    tau over the sampled units; ``pop_ate`` is the analytic population ATE.
    """

    tau: Callable[[np.ndarray], np.ndarray]
    e: Callable[[np.ndarray], np.ndarray]
    mu0: Callable[[np.ndarray], np.ndarray]
    mu1: Callable[[np.ndarray], np.ndarray]
    sample_ate: float
    pop_ate: float
    feature_names: Tuple[str, ...]


def _pad_features(X, d_default, d_requested, rng, names):
    """Append inert N(0,1) covariates up to the requested width."""
    d = d_default if d_requested is None else int(d_requested)
    if d < d_default:
        raise ConfigError(f"this DGP needs at least {d_default} features, got d={d}")
    if d > d_default:
        extra = rng.normal(size=(X.shape[0], d - d_default))
        X = np.hstack([X, extra])
        names = list(names) + [f"x{j + 1}" for j in range(d_default, d)]
    return X, list(names)


def _clusters(rng, n, n_clusters):
    ids = rng.integers(0, n_clusters, size=n)
    width = len(str(n_clusters - 1))
    labels = np.array([f"s{c:0{width}d}" for c in ids], dtype=object)
    return ids, labels


def _assemble(spec, rng, X, names, e_fn, mu0_fn, mu1_fn):
    n = spec.n
    cluster_idx, cluster_labels = _clusters(rng, n, spec.n_clusters)
    cluster_effect = rng.normal(0.0, spec.cluster_sd, size=spec.n_clusters)[cluster_idx]
    e = np.clip(e_fn(X), 1e-9, 1 - 1e-9)
    z = (rng.uniform(size=n) < e).astype(np.int64)
    # guarantee both arms are populated (Dataset requires it); flip the unit
    # whose assignment probability argues hardest for the missing arm
    if z.sum() == 0:
        z[int(np.argmax(e))] = 1
    elif z.sum() == n:
        z[int(np.argmin(e))] = 0
    noise = rng.normal(0.0, spec.noise_sd, size=n)
    y = np.where(z == 1, mu1_fn(X), mu0_fn(X)) + cluster_effect + noise

    columns = [Column(nm, CONTINUOUS) for nm in names]
    width = len(str(n - 1))
    unit_ids = np.array([f"u{i:0{width}d}" for i in range(n)], dtype=object)
    ds = Dataset(
        unit_ids=unit_ids,
        columns=tuple(columns),
        features=X,
        treatment=z,
        outcome=y,
        cluster_ids=cluster_labels,
    )
    return ds


def _make_handle(tau_fn, e_fn, mu0_fn, mu1_fn, X, pop_ate, names):
    return TruthHandle(
        tau=tau_fn,
        e=e_fn,
        mu0=mu0_fn,
        mu1=mu1_fn,
        sample_ate=float(np.mean(tau_fn(X))),
        pop_ate=float(pop_ate),
        feature_names=tuple(names),
    )


def generate(spec: DgpSpec) -> Tuple[Dataset, TruthHandle]:
    """Sample a dataset from the named DGP. Bit-reproducible per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    builder = _BUILDERS[spec.name]
    return builder(spec, rng)


def _constant_effect(spec, rng):
    tau_c = spec.param("tau", 0.25)
    e_c = spec.param("e", 0.33)
    X = rng.normal(size=(spec.n, 4))
    X, names = _pad_features(X, 4, spec.d, rng, ["x1", "x2", "x3", "x4"])

    def mu0(x):
        return 0.5 * x[:, 0] + 0.25 * x[:, 1]

    def mu1(x):
        return mu0(x) + tau_c

    def tau(x):
        return np.full(x.shape[0], tau_c)

    def e(x):
        return np.full(x.shape[0], e_c)

    ds = _assemble(spec, rng, X, names, e, mu0, mu1)
    return ds, _make_handle(tau, e, mu0, mu1, X, tau_c, names)


def _linear_tau(spec, rng):
    e_c = spec.param("e", 0.5)
    X = rng.normal(size=(spec.n, 2))
    X, names = _pad_features(X, 2, spec.d, rng, ["x1", "x2"])

    def mu0(x):
        return 0.5 * x[:, 0] + 0.25 * x[:, 1]

    def tau(x):
        return x[:, 0].copy()

    def mu1(x):
        return mu0(x) + tau(x)

    def e(x):
        return np.full(x.shape[0], e_c)

    ds = _assemble(spec, rng, X, names, e, mu0, mu1)
    return ds, _make_handle(tau, e, mu0, mu1, X, 0.0, names)


def _goldilocks(spec, rng):
    # treatment helps most at mid-range achievement; effect profile is a
    # Gaussian bump over the first feature
    lo = spec.param("tau_lo", 0.1)
    hi = spec.param("tau_hi", 0.4)
    mid = spec.param("midpoint", 0.15)
    width = spec.param("width", 0.6)
    e_c = spec.param("e", 0.33)
    X = rng.normal(size=(spec.n, 3))
    X, names = _pad_features(X, 3, spec.d, rng, ["achievement", "expectation", "x3"])

    def tau(x):
        return lo + (hi - lo) * np.exp(-((x[:, 0] - mid) ** 2) / (2 * width**2))

    def mu0(x):
        return 0.4 * x[:, 0] + 0.2 * x[:, 1]

    def mu1(x):
        return mu0(x) + tau(x)

    def e(x):
        return np.full(x.shape[0], e_c)

    # E[exp(-(X-m)^2 / 2s^2)] for X ~ N(0,1)
    bump_mean = width / np.sqrt(width**2 + 1) * np.exp(-(mid**2) / (2 * (width**2 + 1)))
    pop = lo + (hi - lo) * bump_mean
    ds = _assemble(spec, rng, X, names, e, mu0, mu1)
    return ds, _make_handle(tau, e, mu0, mu1, X, pop, names)


def _confounded(spec, rng):
    # units with higher expectations are more likely to be treated, and the
    # same feature raises the baseline outcome
    tau_c = spec.param("tau", 0.25)
    e_lo = spec.param("e_lo", 0.15)
    e_hi = spec.param("e_hi", 0.46)
    X = rng.normal(size=(spec.n, 3))
    X, names = _pad_features(X, 3, spec.d, rng, ["expectation", "x2", "x3"])

    def e(x):
        return e_lo + (e_hi - e_lo) * norm.cdf(x[:, 0])

    def mu0(x):
        return 0.5 * x[:, 0] + 0.25 * x[:, 1]

    def mu1(x):
        return mu0(x) + tau_c

    def tau(x):
        return np.full(x.shape[0], tau_c)

    ds = _assemble(spec, rng, X, names, e, mu0, mu1)
    return ds, _make_handle(tau, e, mu0, mu1, X, tau_c, names)


def _unbalanced_arms(spec, rng):
    e_c = spec.param("e", 0.05)
    X = rng.normal(size=(spec.n, 2))
    X, names = _pad_features(X, 2, spec.d, rng, ["x1", "x2"])

    def tau(x):
        return 1.0 + x[:, 0]

    def mu0(x):
        return 0.5 * x[:, 0] + 0.25 * x[:, 1]

    def mu1(x):
        return mu0(x) + tau(x)

    def e(x):
        return np.full(x.shape[0], e_c)

    ds = _assemble(spec, rng, X, names, e, mu0, mu1)
    return ds, _make_handle(tau, e, mu0, mu1, X, 1.0, names)


def _clustered_school(spec, rng):
    """Multi-school study: four continuous student features, a school-level
    urbanicity category, random school intercepts, and a lower effect at
    urbanicity-3 schools."""
    tau_base = spec.param("tau_base", 0.28)
    tau_urban3 = spec.param("tau_urban3", 0.16)
    e_c = spec.param("e", 0.33)
    n = spec.n
    n_sch = spec.n_clusters
    sch_idx, _ = _clusters(rng, n, n_sch)
    urb_of_school = rng.integers(0, 4, size=n_sch)
    sch_ach = rng.normal(0.0, 0.3, size=n_sch)

    ach = rng.normal(size=n) + sch_ach[sch_idx]
    expectation = rng.normal(size=n)
    mindset = rng.normal(size=n)
    prior = rng.normal(size=n)
    urb = urb_of_school[sch_idx].astype(np.float64)
    X = np.column_stack([ach, expectation, mindset, prior, urb])
    names = ["achievement", "expectation", "mindset", "prior", "urbanicity"]
    kinds = [CONTINUOUS] * 4 + [CATEGORICAL]
    levels = {"urbanicity": ("0", "1", "2", "3")}

    def tau(x):
        return np.where(x[:, 4] == 3.0, tau_urban3, tau_base)

    def mu0(x):
        return 0.5 * x[:, 0] + 0.3 * x[:, 1] + 0.1 * x[:, 2]

    def mu1(x):
        return mu0(x) + tau(x)

    def e(x):
        return np.full(x.shape[0], e_c)

    if spec.d is not None and spec.d != 5:
        raise ConfigError("clustered_school has a fixed set of 5 features")

    cluster_sd = spec.cluster_sd if spec.cluster_sd > 0 else 0.2
    cluster_effect = rng.normal(0.0, cluster_sd, size=n_sch)[sch_idx]
    e_vals = np.full(n, e_c)
    z = (rng.uniform(size=n) < e_vals).astype(np.int64)
    if z.sum() == 0:
        z[0] = 1
    elif z.sum() == n:
        z[0] = 0
    noise = rng.normal(0.0, spec.noise_sd, size=n)
    y = np.where(z == 1, mu1(X), mu0(X)) + cluster_effect + noise
    width = len(str(n_sch - 1))
    cluster_labels = np.array([f"s{c:0{width}d}" for c in sch_idx], dtype=object)
    columns = tuple(
        Column(nm, kinds[j], levels[nm] if kinds[j] == CATEGORICAL else ())
        for j, nm in enumerate(names)
    )
    uw = len(str(n - 1))
    ds = Dataset(
        unit_ids=np.array([f"u{i:0{uw}d}" for i in range(n)], dtype=object),
        columns=columns,
        features=X,
        treatment=z,
        outcome=y,
        cluster_ids=cluster_labels,
    )
    pop = tau_base - (tau_base - tau_urban3) * 0.25  # P(urbanicity=3) = 1/4
    return ds, _make_handle(tau, e, mu0, mu1, X, pop, names)


_BUILDERS = {
    "constant_effect": _constant_effect,
    "linear_tau": _linear_tau,
    "goldilocks": _goldilocks,
    "confounded": _confounded,
    "unbalanced_arms": _unbalanced_arms,
    "clustered_school": _clustered_school,
}


def score(estimates, truth_values, metric: str) -> float:
    """Score estimates against true per-unit effects.

    metric: "rmse", "bias", or "sign_coverage" (share of units where the
    estimate's sign matches the truth's; 0 counts as positive).
    """
    est = np.asarray(estimates, dtype=np.float64).ravel()
    tru = np.asarray(truth_values, dtype=np.float64).ravel()
    if est.shape != tru.shape:
        raise ValidationError(f"estimates ({est.shape}) and truth ({tru.shape}) differ in length")
    if metric == "rmse":
        return float(np.sqrt(np.mean((est - tru) ** 2)))
    if metric == "bias":
        return float(np.mean(est - tru))
    if metric == "sign_coverage":
        sgn = lambda a: np.where(a >= 0, 1.0, -1.0)
        return float(np.mean(sgn(est) == sgn(tru)))
    raise ConfigError(f"unknown metric {metric!r}")
