"""Sample containers, CSV ingestion, and fold splitting for cross-fitting."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import (BadFoldCount, DataError, EmptyFile, MissingColumn,
                     NonNumericCell, TreatmentNotInLevels)

__all__ = [
    "TreatmentSpace", "Discrete", "ContinuousInterval", "ContinuousLine",
    "Dataset", "FoldAssignment", "load_csv", "save_csv", "split_folds",
]


class TreatmentSpace:
    """Marker base for the supported treatment supports."""

    is_discrete = False

    def contains(self, t) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Discrete(TreatmentSpace):
    """Finitely many treatment levels; the dominating measure is counting."""

    levels: tuple

    is_discrete = True

    def __init__(self, levels):
        lv = tuple(float(l) for l in levels)
        if len(lv) < 2:
            raise DataError("a discrete treatment space needs at least 2 levels")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise DataError("treatment levels must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    def contains(self, t):
        return any(t == l for l in self.levels)

    def level_index(self, t) -> int:
        for k, l in enumerate(self.levels):
            if t == l:
                return k
        raise KeyError(t)


@dataclass(frozen=True)
class ContinuousInterval(TreatmentSpace):
    """Treatments on a compact interval; Lebesgue dominating measure."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise DataError(f"interval needs lo < hi, got [{self.lo}, {self.hi}]")

    def contains(self, t):
        return self.lo <= t <= self.hi


@dataclass(frozen=True)
class ContinuousLine(TreatmentSpace):
    """Treatments on the whole real line."""

    def contains(self, t):
        return bool(np.isfinite(t))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """An observed sample (y_i, t_i, x_i), immutable after construction.

    Safe to share across concurrent workers: the arrays are read-only.
    """

    y: NDArray[np.float64]
    t: NDArray[np.float64]
    x: NDArray[np.float64]
    space: TreatmentSpace
    x_names: tuple = field(default=())

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float).ravel())
        t = _readonly(np.asarray(self.t, dtype=float).ravel())
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _readonly(x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        n = len(y)
        if n < 1 or len(t) != n or x.shape[0] != n:
            raise DataError(
                f"y, t, x must share a common length >= 1, got {len(y)}, {len(t)}, {x.shape[0]}")
        for name, arr in (("y", y), ("t", t), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains NaN or infinite entries")
        if isinstance(self.space, Discrete):
            levels = np.array(self.space.levels)
            bad = ~np.isin(t, levels)
            if bad.any():
                row = int(np.argmax(bad))
                raise TreatmentNotInLevels(row, t[row])
        if not self.x_names:
            object.__setattr__(self, "x_names",
                               tuple(f"x{j+1}" for j in range(x.shape[1])))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.t[idx], self.x[idx], self.space, self.x_names)


def load_csv(path, y_col: str, t_col: str, x_cols, space: TreatmentSpace) -> Dataset:
    """Read a UTF-8 comma-separated file with a header row into a Dataset.

    Columns are selected by name; row order is preserved.
    """
    x_cols = list(x_cols)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        pos = {}
        for col in [y_col, t_col, *x_cols]:
            if col not in header:
                raise MissingColumn(col)
            pos[col] = header.index(col)
        rows = list(reader)
    if not rows:
        raise EmptyFile(f"{path}: no data rows")

    def cell(row_idx, row, col):
        try:
            return float(row[pos[col]])
        except (ValueError, IndexError):
            value = row[pos[col]] if pos[col] < len(row) else ""
            raise NonNumericCell(row_idx, col, value) from None

    n = len(rows)
    y = np.empty(n)
    t = np.empty(n)
    x = np.empty((n, len(x_cols)))
    for i, row in enumerate(rows):
        y[i] = cell(i, row, y_col)
        t[i] = cell(i, row, t_col)
        for j, col in enumerate(x_cols):
            x[i, j] = cell(i, row, col)
    if isinstance(space, Discrete):
        levels = np.array(space.levels)
        bad = ~np.isin(t, levels)
        if bad.any():
            row = int(np.argmax(bad))
            raise TreatmentNotInLevels(row, t[row])
    return Dataset(y, t, x, space, tuple(x_cols))


def save_csv(data: Dataset, path, y_col="y", t_col="t") -> None:
    """Write a Dataset back to CSV. Floats use repr so a reload is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([y_col, t_col, *data.x_names])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), repr(float(data.t[i])),
                             *(repr(float(v)) for v in data.x[i])])


@dataclass(frozen=True)
class FoldAssignment:
    """Partition of {0..n-1} into L folds with sizes differing by at most 1."""

    fold_of: NDArray[np.int64]
    n_folds: int

    def __post_init__(self):
        object.__setattr__(self, "fold_of",
                           np.asarray(self.fold_of, dtype=np.int64))
        self.fold_of.flags.writeable = False

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


def split_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Deterministic balanced fold assignment.

    A seeded shuffle of the indices followed by round-robin assignment, so
    fold sizes differ by at most one and the result is a pure function of
    (n, n_folds, seed).
    """
    if n_folds < 2 or n_folds > n:
        raise BadFoldCount(f"need 2 <= L <= n, got L={n_folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % n_folds
    return FoldAssignment(fold_of, n_folds)
