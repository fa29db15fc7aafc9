"""Tabular data handling: CSV ingestion, ordinal encoding, z-scoring,
train/test splitting and seeded mini-batch iteration.

All randomness uses numpy's PCG64 generator (``np.random.default_rng``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "?"})


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawTable:
    columns: list[str]
    cells: list[list[str]]
    target: int
    dropped_rows: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def target_name(self) -> str:
        return self.columns[self.target]


@dataclass(frozen=True)
class NumericDataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        X = _frozen(self.features)
        y = _frozen(self.targets)
        if X.ndim != 2 or X.shape[1] < 1:
            raise DataError(f"features must be a 2-D array with at least one column, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"targets shape {y.shape} does not match {X.shape[0]} rows")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains NaN or Inf")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match column count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "NumericDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return NumericDataset(self.features[idx], self.targets[idx], self.feature_names)


@dataclass(frozen=True)
class Normalizer:
    """Per-column statistics; the last entry belongs to the target."""

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "stds", _frozen(self.stds))
        if not (self.stds > 0).all():
            raise DataError("every stored std must be positive")

    @property
    def n_features(self) -> int:
        return self.means.shape[0] - 1

    def inverse_targets(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.stds[-1] + self.means[-1]

    def inverse(self, data: NumericDataset) -> NumericDataset:
        X = data.features * self.stds[:-1] + self.means[:-1]
        return NumericDataset(X, self.inverse_targets(data.targets), data.feature_names)


@dataclass(frozen=True)
class Split:
    train: NumericDataset
    test: NumericDataset
    seed: int
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)


def load_csv(path, target: str, delimiter: str = ",") -> RawTable:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target not in header:
            raise DataError(f"target column not found: {target!r}")
        rows, dropped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            row = [cell.strip() for cell in row]
            if any(cell in MISSING_TOKENS for cell in row):
                dropped += 1
                continue
            rows.append(row)
    if dropped:
        logger.info("%s: dropped %d rows with missing cells", path, dropped)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 complete rows, found {len(rows)}")
    return RawTable(header, rows, header.index(target), dropped)


def encode(table: RawTable, policy: dict[str, dict[str, float]] | None = None) -> NumericDataset:
    """Convert a raw table into numbers, mapping categorical columns through
    ``policy`` (column -> {label: code}). One output column per input column."""
    policy = policy or {}
    unknown = set(policy) - set(table.columns)
    if unknown:
        raise DataError(f"encoding refers to unknown columns: {sorted(unknown)}")
    out = np.empty((table.n_rows, len(table.columns)))
    for j, name in enumerate(table.columns):
        mapping = policy.get(name)
        for i, row in enumerate(table.cells):
            cell = row[j]
            if mapping is not None:
                if cell not in mapping:
                    raise DataError(f"column {name!r}: label {cell!r} has no mapping")
                out[i, j] = float(mapping[cell])
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"column {name!r}: non-numeric value {cell!r} (data row {i + 1}) and no encoding given"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"column {name!r}: non-finite value {cell!r}")
            out[i, j] = v
    keep = [j for j in range(len(table.columns)) if j != table.target]
    return NumericDataset(out[:, keep], out[:, table.target], tuple(table.columns[j] for j in keep))


def zscore_fit(train: NumericDataset) -> Normalizer:
    full = np.column_stack([train.features, train.targets])
    means = full.mean(axis=0)
    stds = full.std(axis=0, ddof=1) if len(train) > 1 else np.zeros(full.shape[1])
    # constant columns normalize to 0 instead of dividing by zero
    stds = np.where(stds > 0, stds, 1.0)
    return Normalizer(means, stds)


def zscore_apply(norm: Normalizer, data: NumericDataset) -> NumericDataset:
    if data.n_features != norm.n_features:
        raise DataError(f"normalizer expects {norm.n_features} features, data has {data.n_features}")
    X = (data.features - norm.means[:-1]) / norm.stds[:-1]
    y = (data.targets - norm.means[-1]) / norm.stds[-1]
    return NumericDataset(X, y, data.feature_names)


def split(data: NumericDataset, ratio: float, seed: int) -> Split:
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(data)
    if n < 2:
        raise DataError("need at least 2 rows to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return Split(data.subset(tr), data.subset(te), seed, tr, te)


def batches(train, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches for one epoch over ``train`` (a dataset or a row count).

    The permutation is drawn from a generator seeded with ``(seed, epoch)``;
    the final short batch is kept.
    """
    n_train = train if isinstance(train, (int, np.integer)) else len(train)
    if batch_size <= 0:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    if n_train <= 0:
        raise ValueError("no training rows")
    perm = np.random.default_rng([seed, epoch]).permutation(n_train)
    return [perm[i : i + batch_size] for i in range(0, n_train, batch_size)]


def prepare(
    path,
    target: str,
    encoding: dict | None = None,
    ratio: float = 0.7,
    split_seed: int = 0,
    delimiter: str = ",",
) -> tuple[Split, Normalizer]:
    """Load, encode, split and z-score a dataset using training statistics only."""
    raw = encode(load_csv(path, target, delimiter), encoding)
    parts = split(raw, ratio, split_seed)
    norm = zscore_fit(parts.train)
    out = Split(
        zscore_apply(norm, parts.train),
        zscore_apply(norm, parts.test),
        split_seed,
        parts.train_index,
        parts.test_index,
    )
    return out, norm
