"""Small dataset builders shared across test modules."""

import numpy as np

from catesuite.data import CATEGORICAL, CONTINUOUS, Column, Dataset


def toy_dataset(n=24, d=2, n_clusters=4, seed=0, tau=1.0, noise=0.0):
    """Deterministic toy data: Y = x1 + tau*Z + noise, alternating arms,
    round-robin clusters."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    z = np.arange(n) % 2
    y = X[:, 0] + tau * z
    if noise:
        y = y + rng.normal(0.0, noise, size=n)
    return Dataset(
        unit_ids=np.array([f"u{i:03d}" for i in range(n)], dtype=object),
        columns=tuple(Column(f"x{j + 1}", CONTINUOUS) for j in range(d)),
        features=X,
        treatment=z.astype(np.int64),
        outcome=y,
        cluster_ids=np.array([f"c{i % n_clusters}" for i in range(n)], dtype=object),
    )


def mixed_dataset(n=30, seed=0):
    """Two continuous features plus one categorical with levels a/b/c."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 3))
    X[:, 0] = rng.normal(size=n)
    X[:, 1] = rng.uniform(size=n)
    cat_codes = rng.integers(0, 3, size=n)
    X[:, 2] = cat_codes.astype(float)
    z = np.arange(n) % 2
    y = X[:, 0] + 0.5 * z + 0.1 * cat_codes
    columns = (
        Column("x1", CONTINUOUS),
        Column("x2", CONTINUOUS),
        Column("grade", CATEGORICAL, levels=("a", "b", "c")),
    )
    return Dataset(
        unit_ids=np.array([f"m{i}" for i in range(n)], dtype=object),
        columns=columns,
        features=X,
        treatment=z.astype(np.int64),
        outcome=y,
        cluster_ids=np.array([f"s{i % 5}" for i in range(n)], dtype=object),
    )
