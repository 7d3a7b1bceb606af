"""Datasets, seeded splits, and synthetic regression data.

Tables are plain CSV with header ``id,y,f0,...,f{d-1}``. Labels are pIC50
units for chemistry data and arbitrary units for synthetic data. Fingerprints
are just 0/1-valued feature columns; nothing here is chemistry-specific.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .seeds import rng_for


class DataError(ValueError):
    """Raised for malformed tables or invalid split/generation requests."""


@dataclass(frozen=True)
class Dataset:
    """Immutable table of (id, label, feature vector) rows."""

    ids: tuple
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = len(self.ids)
        if n == 0:
            raise DataError("dataset must have at least one row")
        if labels.shape != (n,) or features.shape[0] != n:
            raise DataError("ids, labels and features must have the same length")
        if not np.all(np.isfinite(labels)) or not np.all(np.isfinite(features)):
            raise DataError("labels and features must be finite")
        if len(set(self.ids)) != n:
            raise DataError("duplicate ids in dataset")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)
        self.labels.setflags(write=False)
        self.features.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            ids=tuple(self.ids[i] for i in idx),
            labels=self.labels[idx],
            features=self.features[idx],
        )


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/validation/test index sets."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.intp) for p in (self.train, self.validation, self.test)]
        object.__setattr__(self, "train", parts[0])
        object.__setattr__(self, "validation", parts[1])
        object.__setattr__(self, "test", parts[2])
        n = sum(len(p) for p in parts)
        merged = np.concatenate(parts)
        if any(len(p) == 0 for p in parts):
            raise DataError("every split partition must be non-empty")
        if len(np.unique(merged)) != n or merged.min() != 0 or merged.max() != n - 1:
            raise DataError("split partitions must be disjoint and cover 0..n-1")


def load_table(path, id_column: str = "id", label_column: str = "y") -> Dataset:
    """Load a CSV table of ids, labels and numeric features.

    The header must name the id column, the label column, and at least one
    feature column; every data cell except the id must parse as a finite
    number. Row order is preserved.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if id_column not in header or label_column not in header:
            raise DataError(
                f"{path}: header must contain '{id_column}' and '{label_column}' columns"
            )
        id_pos = header.index(id_column)
        y_pos = header.index(label_column)
        feat_pos = [i for i in range(len(header)) if i not in (id_pos, y_pos)]
        if not feat_pos:
            raise DataError(f"{path}: no feature columns in header")
        ids, labels, rows = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
            ids.append(row[id_pos])
            labels.append(_parse_cell(row[y_pos], path, rownum, header[y_pos]))
            rows.append([_parse_cell(row[j], path, rownum, header[j]) for j in feat_pos])
    if not ids:
        raise DataError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate id values")
    return Dataset(ids=tuple(ids), labels=np.array(labels), features=np.array(rows))


def _parse_cell(cell: str, path, rownum: int, colname: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(
            f"{path}: row {rownum}, column {colname}: cannot parse '{cell}' as a number"
        ) from None
    if not math.isfinite(value):
        raise DataError(f"{path}: row {rownum}, column {colname}: non-finite value '{cell}'")
    return value


def save_table(dataset: Dataset, path, id_column: str = "id", label_column: str = "y") -> None:
    """Write a Dataset back to CSV, exactly round-trippable via load_table."""
    d = dataset.n_features
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_column, label_column] + [f"f{j}" for j in range(d)])
        for i in range(dataset.n_rows):
            # repr() keeps every float bit-exact through the round trip
            writer.writerow(
                [dataset.ids[i], repr(float(dataset.labels[i]))]
                + [repr(float(v)) for v in dataset.features[i]]
            )


def random_split(n_rows: int, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> SplitIndices:
    """Partition 0..n_rows-1 into seeded train/validation/test index sets.

    Cut points are floor(n*f_train) and floor(n*(f_train+f_val)); remainder
    rows after flooring go to the test partition.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0:
        raise DataError("split fractions must be positive")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1.0")
    if n_rows < 3:
        raise DataError("need at least 3 rows to populate all three partitions")
    perm = rng_for(seed, "split").permutation(n_rows)
    c1 = int(math.floor(n_rows * f_train))
    c2 = int(math.floor(n_rows * (f_train + f_val)))
    if c1 < 1 or c2 - c1 < 1 or n_rows - c2 < 1:
        raise DataError(f"n_rows={n_rows} too small for fractions {fractions}")
    return SplitIndices(train=perm[:c1], validation=perm[c1:c2], test=perm[c2:], seed=seed)


def _target_function(X: np.ndarray) -> np.ndarray:
    # Smooth, low-effective-dimension target: learnable by both a small MLP
    # and an axis-aligned forest at desk scale.
    d = X.shape[1]
    y = X[:, 0].copy()
    if d >= 2:
        y = y + np.sin(2.0 * X[:, 1])
    if d >= 3:
        y = y + 0.5 * X[:, 2]
    return y


def make_synthetic(
    n: int,
    d: int,
    noise: str = "homoscedastic",
    scale: float = 0.3,
    seed: int = 0,
) -> Dataset:
    """Generate a seeded synthetic regression dataset.

    ``noise`` is "homoscedastic" (constant std = scale) or "heteroscedastic"
    (per-row std = scale * (0.25 + |x0|), so ensemble spread has signal to
    exploit). scale=0 gives labels exactly equal to the generating function.
    """
    if n < 10 or d < 1:
        raise DataError("synthetic data needs n >= 10 and d >= 1")
    if scale < 0:
        raise DataError("noise scale must be >= 0")
    if noise not in ("homoscedastic", "heteroscedastic"):
        raise DataError(f"unknown noise model '{noise}'")
    rng = rng_for(seed, "synthetic")
    X = rng.standard_normal((n, d))
    y = _target_function(X)
    if scale > 0:
        if noise == "homoscedastic":
            sd = np.full(n, scale)
        else:
            sd = scale * (0.25 + np.abs(X[:, 0]))
        y = y + sd * rng.standard_normal(n)
    ids = tuple(f"s{i:06d}" for i in range(n))
    return Dataset(ids=ids, labels=y, features=X)


def synthetic_target(X: np.ndarray) -> np.ndarray:
    """The noise-free generating function used by make_synthetic."""
    return _target_function(np.asarray(X, dtype=np.float64))
