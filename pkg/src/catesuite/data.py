"""Observational-study data model: ingestion, validation, encoding, splitting.

The unit of analysis is a row with a feature vector, a binary treatment
indicator, a continuous outcome, and an optional cluster id (e.g. the school
a student attends). Categorical features are stored as integer level codes
into a sorted level vocabulary so the feature matrix stays dense float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

EXPLORATION = "exploration"
VALIDATION = "validation"


@dataclass(frozen=True)
class Column:
    """One feature column: its name, kind, and (if categorical) sorted levels."""

    name: str
    kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise ConfigError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == CATEGORICAL and not self.levels:
            raise ConfigError(f"categorical column {self.name!r} needs levels")


@dataclass(frozen=True)
class ColumnSchema:
    """Column-role mapping used by :func:`load_csv`.

    ``features=None`` means every column that is not assigned another role is
    a feature. Feature order follows the file's header order.
    """

    outcome: str
    treatment: str
    cluster: str | None = None
    categorical: tuple[str, ...] = ()
    features: tuple[str, ...] | None = None
    unit_id: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(
            outcome=d["outcome"],
            treatment=d["treatment"],
            cluster=d.get("cluster"),
            categorical=tuple(d.get("categorical", ())),
            features=tuple(d["features"]) if d.get("features") else None,
            unit_id=d.get("unit_id"),
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable study table. Arrays are write-protected after construction."""

    unit_ids: np.ndarray
    columns: tuple[Column, ...]
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    cluster_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "unit_ids", np.asarray(self.unit_ids, dtype=object))
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "treatment", np.asarray(self.treatment, dtype=np.int64))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=np.float64))
        if self.cluster_ids is not None:
            object.__setattr__(self, "cluster_ids", np.asarray(self.cluster_ids, dtype=object))
        self._validate()
        for arr in (self.unit_ids, self.features, self.treatment, self.outcome, self.cluster_ids):
            if arr is not None:
                arr.flags.writeable = False

    def _validate(self) -> None:
        n, d = self.features.shape if self.features.ndim == 2 else (0, 0)
        if self.features.ndim != 2 or n < 2 or d < 1:
            raise ValidationError("features must be a 2-D matrix with n >= 2 and d >= 1")
        if len(self.columns) != d:
            raise ValidationError(f"{len(self.columns)} column records for {d} feature columns")
        for arr, what in ((self.unit_ids, "unit_ids"), (self.treatment, "treatment"),
                          (self.outcome, "outcome")):
            if arr.shape != (n,):
                raise ValidationError(f"{what} has shape {arr.shape}, expected ({n},)")
        if self.cluster_ids is not None and self.cluster_ids.shape != (n,):
            raise ValidationError("cluster_ids length does not match feature rows")
        values = set(np.unique(self.treatment).tolist())
        if not values <= {0, 1}:
            raise ValidationError(f"treatment contains values other than 0/1: {sorted(values)}")
        if values != {0, 1}:
            raise ValidationError("both treatment arms must be present")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")
        if not np.all(np.isfinite(self.outcome)):
            raise ValidationError("outcome contains NaN or Inf")
        if len(set(self.unit_ids.tolist())) != n:
            raise ValidationError("unit_id values are not unique")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown feature {name!r}") from None

    def column(self, name: str) -> Column:
        return self.columns[self.column_index(name)]

    def raw_values(self, name: str) -> np.ndarray:
        """Feature column in raw form: floats, or level strings if categorical."""
        j = self.column_index(name)
        col = self.columns[j]
        vals = self.features[:, j]
        if col.kind == CATEGORICAL:
            return np.array([col.levels[int(v)] for v in vals], dtype=object)
        return vals.copy()

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            unit_ids=self.unit_ids[rows].copy(),
            columns=self.columns,
            features=self.features[rows].copy(),
            treatment=self.treatment[rows].copy(),
            outcome=self.outcome[rows].copy(),
            cluster_ids=None if self.cluster_ids is None else self.cluster_ids[rows].copy(),
        )

    def with_outcome(self, outcome: np.ndarray) -> "Dataset":
        return replace(self, outcome=np.array(outcome, dtype=np.float64))

    def with_treatment(self, treatment: np.ndarray) -> "Dataset":
        return replace(self, treatment=np.array(treatment, dtype=np.int64))

    def with_features(self, features: np.ndarray) -> "Dataset":
        return replace(self, features=np.array(features, dtype=np.float64))


def effective_cluster_ids(ds: Dataset) -> np.ndarray:
    """Cluster id per row; rows without one become singleton clusters."""
    if ds.cluster_ids is None:
        return np.array([f"unit:{u}" for u in ds.unit_ids], dtype=object)
    out = ds.cluster_ids.copy()
    missing = np.array([c is None or str(c) == "" for c in out])
    if missing.any():
        out = np.where(missing, np.array([f"unit:{u}" for u in ds.unit_ids], dtype=object), out)
    return out.astype(object)


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"unparseable numeric value {text!r} in column {col!r} at row {row}") from None
    if not np.isfinite(v):
        raise ValidationError(f"non-finite value in column {col!r} at row {row}")
    return v


def load_csv(path: str, schema: ColumnSchema) -> Dataset:
    """Read a headered CSV into a validated :class:`Dataset`.

    Leading lines starting with ``#`` are skipped (this package's own CSV
    outputs carry a provenance comment there). Row numbers in error messages
    are 1-based data rows, header excluded.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ValidationError(f"cannot read {path!r}: {exc}") from exc
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    index = {name: i for i, name in enumerate(header)}

    for role, name in (("outcome", schema.outcome), ("treatment", schema.treatment)):
        if name not in index:
            raise ValidationError(f"{role} column {name!r} missing from header {header}")
    if schema.cluster is not None and schema.cluster not in index:
        raise ValidationError(f"cluster column {schema.cluster!r} missing from header")
    if schema.unit_id is not None and schema.unit_id not in index:
        raise ValidationError(f"unit_id column {schema.unit_id!r} missing from header")

    reserved = {schema.outcome, schema.treatment, schema.cluster, schema.unit_id}
    if schema.features is None:
        feature_names = [h for h in header if h not in reserved]
    else:
        feature_names = list(schema.features)
        for name in feature_names:
            if name not in index:
                raise ValidationError(f"feature column {name!r} missing from header")
    if not feature_names:
        raise ValidationError("schema selects no feature columns")
    for name in schema.categorical:
        if name not in feature_names:
            raise ValidationError(f"categorical column {name!r} is not a feature column")

    rows = [r for r in reader if r]
    n = len(rows)
    if n < 2:
        raise ValidationError(f"{path}: need at least 2 data rows, found {n}")
    width = len(header)
    for i, r in enumerate(rows, start=1):
        if len(r) != width:
            raise ValidationError(f"row {i} has {len(r)} fields, expected {width}")

    treatment = np.empty(n, dtype=np.int64)
    for i, r in enumerate(rows, start=1):
        raw = r[index[schema.treatment]].strip()
        v = _parse_float(raw, i, schema.treatment)
        if v not in (0.0, 1.0):
            raise ValidationError(f"treatment value {raw!r} at row {i} is not 0 or 1")
        treatment[i - 1] = int(v)

    outcome = np.array(
        [_parse_float(r[index[schema.outcome]].strip(), i, schema.outcome)
         for i, r in enumerate(rows, start=1)]
    )

    categorical = set(schema.categorical)
    columns: list[Column] = []
    features = np.empty((n, len(feature_names)))
    for j, name in enumerate(feature_names):
        cells = [r[index[name]].strip() for r in rows]
        if name in categorical:
            levels = tuple(sorted(set(cells)))
            code = {lv: k for k, lv in enumerate(levels)}
            features[:, j] = [code[c] for c in cells]
            columns.append(Column(name, CATEGORICAL, levels))
        else:
            features[:, j] = [_parse_float(c, i, name) for i, c in enumerate(cells, start=1)]
            columns.append(Column(name, CONTINUOUS))

    if schema.unit_id is not None:
        unit_ids = np.array([r[index[schema.unit_id]].strip() for r in rows], dtype=object)
    else:
        width_n = len(str(n))
        unit_ids = np.array([f"u{i:0{width_n}d}" for i in range(1, n + 1)], dtype=object)

    cluster_ids = None
    if schema.cluster is not None:
        cluster_ids = np.array([r[index[schema.cluster]].strip() for r in rows], dtype=object)

    return Dataset(unit_ids, tuple(columns), features, treatment, outcome, cluster_ids)


# ---------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class EncodingPlan:
    """Deterministic feature-matrix encoding fitted on a training dataset.

    Continuous columns pass through; categorical columns expand to one-hot
    blocks over the levels seen at fit time (sorted lexicographically); with
    ``include_cluster`` the cluster id is appended as one more one-hot block.
    Applying the plan to new data keeps the training column order; unseen
    levels (and unseen clusters) map to an all-zero block.
    """

    columns: tuple[Column, ...]
    include_cluster: bool = False
    cluster_levels: tuple[str, ...] = ()

    def output_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for col in self.columns:
            if col.kind == CATEGORICAL:
                names.extend(f"{col.name}={lv}" for lv in col.levels)
            else:
                names.append(col.name)
        if self.include_cluster:
            names.extend(f"cluster={cid}" for cid in self.cluster_levels)
        return tuple(names)

    @property
    def n_outputs(self) -> int:
        k = sum(len(c.levels) if c.kind == CATEGORICAL else 1 for c in self.columns)
        return k + (len(self.cluster_levels) if self.include_cluster else 0)

    def source_feature_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def transform(self, ds: Dataset) -> np.ndarray:
        if ds.feature_names != self.source_feature_names():
            raise ValidationError(
                f"dataset features {ds.feature_names} do not match plan {self.source_feature_names()}"
            )
        if self.include_cluster and ds.cluster_ids is None:
            raise ValidationError("plan includes cluster id but dataset has no cluster column")
        blocks: list[np.ndarray] = []
        for j, col in enumerate(self.columns):
            if col.kind != CATEGORICAL:
                blocks.append(ds.features[:, j : j + 1])
                continue
            ds_col = ds.columns[j]
            if ds_col.kind != CATEGORICAL:
                raise ValidationError(f"column {col.name!r} is not categorical in this dataset")
            block = np.zeros((ds.n, len(col.levels)))
            pos = {lv: k for k, lv in enumerate(col.levels)}
            codes = ds.features[:, j].astype(np.int64)
            for i in range(ds.n):
                k = pos.get(ds_col.levels[codes[i]])
                if k is not None:
                    block[i, k] = 1.0
            blocks.append(block)
        if self.include_cluster:
            block = np.zeros((ds.n, len(self.cluster_levels)))
            pos = {cid: k for k, cid in enumerate(self.cluster_levels)}
            for i, cid in enumerate(ds.cluster_ids):
                k = pos.get(str(cid))
                if k is not None:
                    block[i, k] = 1.0
            blocks.append(block)
        return np.ascontiguousarray(np.hstack(blocks))


def encode(ds: Dataset, include_cluster: bool = False) -> tuple[np.ndarray, EncodingPlan]:
    """One-hot encode a dataset and return the reusable plan behind it."""
    if include_cluster and ds.cluster_ids is None:
        raise ConfigError("include_cluster=True but the dataset has no cluster column")
    cluster_levels: tuple[str, ...] = ()
    if include_cluster:
        cluster_levels = tuple(sorted({str(c) for c in ds.cluster_ids}))
    plan = EncodingPlan(ds.columns, include_cluster, cluster_levels)
    return plan.transform(ds), plan


def write_encoded_csv(path: str, ds: Dataset, plan: EncodingPlan, meta: dict | None = None) -> None:
    """Export an encoded feature matrix for debugging."""
    from ._io import write_csv

    X = plan.transform(ds)
    header = ("unit_id",) + plan.output_names()
    rows = ([uid] + [float(v) for v in X[i]] for i, uid in enumerate(ds.unit_ids))
    write_csv(path, header, rows, meta)


# ---------------------------------------------------------------------------
# Cluster-level exploration/validation split


@dataclass(frozen=True)
class SplitAssignment:
    """Cluster-to-side assignment plus derived row index lists."""

    sides: dict[str, str]
    exploration_rows: np.ndarray = field(repr=False)
    validation_rows: np.ndarray = field(repr=False)

    def side_of(self, cluster: str) -> str:
        return self.sides[cluster]


def cluster_split(ds: Dataset, seed: int) -> SplitAssignment:
    """Assign whole clusters to an exploration or validation side.

    Clusters are shuffled with the seeded generator, then placed largest
    first onto the side with fewer rows so far, which keeps the row-count
    imbalance at or below the largest cluster size. Rows without a cluster
    id count as singleton clusters.
    """
    clusters = effective_cluster_ids(ds)
    unique = sorted(set(clusters.tolist()))
    if len(unique) < 2:
        raise ValidationError("cluster_split needs at least 2 clusters")
    sizes = {c: 0 for c in unique}
    for c in clusters:
        sizes[c] += 1

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = [unique[i] for i in rng.permutation(len(unique))]
    order.sort(key=lambda c: -sizes[c])  # stable: shuffle breaks size ties

    rows = {EXPLORATION: 0, VALIDATION: 0}
    sides: dict[str, str] = {}
    for c in order:
        side = EXPLORATION if rows[EXPLORATION] <= rows[VALIDATION] else VALIDATION
        sides[c] = side
        rows[side] += sizes[c]

    mask = np.array([sides[c] == EXPLORATION for c in clusters])
    return SplitAssignment(
        sides=sides,
        exploration_rows=np.flatnonzero(mask),
        validation_rows=np.flatnonzero(~mask),
    )
