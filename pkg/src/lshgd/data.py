"""Dataset ingestion, row normalization, centering, and train/test splits.

The ingestion format is plain numeric CSV (UTF-8, comma-separated,
decimal-point floats) with one label column; a non-numeric first row is
treated as a header.  Features are normalized to unit L2 norm so the
gradient-norm identities of the models module hold; labels are never
rescaled.  Splits are either seeded shuffles or order-respecting cuts
(some public benchmarks fix the first rows as the training set to keep
correlated records out of both halves), and every split can be written
to a JSON manifest for replay.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import generator

__all__ = [
    "LabeledPoint",
    "Dataset",
    "PreprocessConfig",
    "ORDERED_TRAIN_COUNTS",
    "load_csv",
    "normalize",
    "center_stored",
    "split",
    "split_ordered",
    "write_split_manifest",
    "read_split_manifest",
]

# Documented order-respecting protocols: dataset name -> training rows.
ORDERED_TRAIN_COUNTS = {
    "yearpredictionmsd": 463_715,
    "slice": 42_800,
}


@dataclass(frozen=True)
class LabeledPoint:
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class Dataset:
    """N labeled points with uniform dimension d."""

    x: np.ndarray  # (N, d) float64
    y: np.ndarray  # (N,) float64
    name: str = "unnamed"
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.x.shape[0] == 0:
            raise ValueError("dataset needs a non-empty (N, d) feature matrix")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError(
                f"labels have shape {self.y.shape}, expected ({self.x.shape[0]},)"
            )
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def point(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.x[i], float(self.y[i]))

    def subset(self, indices: np.ndarray, suffix: str = "") -> "Dataset":
        return Dataset(
            self.x[indices], self.y[indices], name=self.name + suffix,
            provenance=self.provenance,
        )


@dataclass(frozen=True)
class PreprocessConfig:
    normalize_rows: bool = True
    center_stored: bool = False
    split_fraction: float = 0.9
    split_seed: int = 0
    ordered: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(
                f"split fraction must lie in (0, 1), got {self.split_fraction}"
            )


def _parse_cell(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValueError(
            f"non-numeric value {cell!r} at row {row}, column {col}"
        ) from None


def load_csv(path: str, label_column: int | str) -> Dataset:
    """Parse a numeric CSV into a Dataset.

    ``label_column`` is a zero-based index, or a column name when the
    file has a header (detected by a non-numeric first row).  Ragged
    rows and non-numeric cells raise with the offending row/column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path!r} contains no data rows")
    header: list[str] | None = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{path!r} contains only a header row")
    if isinstance(label_column, str):
        if header is None:
            raise ValueError(f"label column {label_column!r} needs a header row")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise ValueError(
                f"label column {label_column!r} not in header {header}"
            ) from None
    else:
        label_idx = label_column
    width = len(rows[0])
    if not 0 <= label_idx < width:
        raise ValueError(f"label column {label_idx} out of range for {width} columns")
    first_data_row = 1 if header is None else 2
    values = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(
                f"ragged row {i + first_data_row}: {len(row)} cells, expected {width}"
            )
        for j, cell in enumerate(row):
            values[i, j] = _parse_cell(cell, i + first_data_row, j)
    mask = np.ones(width, dtype=bool)
    mask[label_idx] = False
    return Dataset(values[:, mask], values[:, label_idx], name=path, provenance=path)


def normalize(ds: Dataset) -> Dataset:
    """Scale every feature row to unit L2 norm; labels untouched."""
    norms = np.linalg.norm(ds.x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"cannot normalize zero-norm feature row {int(zero[0])}")
    return Dataset(ds.x / norms[:, None], ds.y, name=ds.name, provenance=ds.provenance)


def center_stored(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the component-wise mean from each stored (hash-side) vector.

    Applies to the vectors fed to the hash tables only; gradient
    evaluation must keep using the uncentered data.  Returns the mean
    for audit.  Centering changes inner products, and the collision
    probability the sampler reports is not corrected for it, so this is
    off by default and exposed purely as a fidelity knob.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("center_stored needs a non-empty (N, m) matrix")
    mean = vectors.mean(axis=0)
    centered = vectors - mean
    if not np.any(centered):
        warnings.warn(
            "all stored vectors are identical; centering left them all-zero, "
            "which makes hashing degenerate",
            stacklevel=2,
        )
    return centered, mean


def split(ds: Dataset, cfg: PreprocessConfig) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test split.

    Ordered splits cut the file order at round(fraction * N); otherwise
    indices are shuffled with the seeded generator first.
    """
    n_train = int(round(cfg.split_fraction * ds.n))
    n_train = min(max(n_train, 1), ds.n - 1)
    if cfg.ordered:
        indices = np.arange(ds.n)
    else:
        indices = generator(cfg.split_seed).permutation(ds.n)
    return (
        ds.subset(indices[:n_train], suffix="/train"),
        ds.subset(indices[n_train:], suffix="/test"),
    )


def split_ordered(ds: Dataset, train_count: int) -> tuple[Dataset, Dataset]:
    """Order-respecting split at an exact row count (benchmark protocols)."""
    if not 0 < train_count < ds.n:
        raise ValueError(f"train count {train_count} out of range for N={ds.n}")
    idx = np.arange(ds.n)
    return ds.subset(idx[:train_count], "/train"), ds.subset(idx[train_count:], "/test")


def write_split_manifest(
    path: str, train_indices: np.ndarray, test_indices: np.ndarray, seed: int | None
) -> None:
    """Record a split as JSON (indices plus seed) for exact replay."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": seed,
                "train_indices": [int(i) for i in train_indices],
                "test_indices": [int(i) for i in test_indices],
            },
            fh,
        )


def read_split_manifest(path: str) -> tuple[np.ndarray, np.ndarray, int | None]:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return (
        np.asarray(blob["train_indices"], dtype=np.int64),
        np.asarray(blob["test_indices"], dtype=np.int64),
        blob["seed"],
    )
