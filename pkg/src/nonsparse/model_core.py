"""Dataset container, CSV ingestion and column standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "CoefficientTruth",
    "ModelPartition",
    "load_csv",
    "standardize",
    "partition",
]


class DataError(ValueError):
    """Malformed or degenerate input data."""


@dataclass(frozen=True)
class Dataset:
    design: np.ndarray
    response: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.design, dtype=float, copy=True)
        y = np.array(self.response, dtype=float, copy=True).ravel()
        if X.ndim != 2:
            raise DataError(f"design must be a matrix, got shape {X.shape}")
        n, p = X.shape
        if n < 2 or p < 1:
            raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DataError(f"response has length {y.shape[0]}, design has {n} rows")
        if not np.all(np.isfinite(X)):
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite design entry at row {i + 1}, column {j + 1}")
        if not np.all(np.isfinite(y)):
            raise DataError(f"non-finite response at row {int(np.argmax(~np.isfinite(y))) + 1}")
        names = tuple(self.names) if self.names is not None else ()
        if not names:
            names = tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    def columns(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.design[:, idx], self.response, tuple(self.names[j] for j in idx))


@dataclass(frozen=True)
class CoefficientTruth:
    """Ground-truth coefficients for simulated data (0-based indices)."""

    beta: np.ndarray
    significant_set: tuple[int, ...]

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, copy=True).ravel()
        sig = tuple(sorted(int(j) for j in self.significant_set))
        if sig and (sig[0] < 0 or sig[-1] >= beta.size):
            raise ValueError("significant_set index out of range")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "significant_set", sig)


@dataclass(frozen=True)
class ModelPartition:
    """Split of the columns into selected (Z) and remaining (U) predictors."""

    selected: np.ndarray
    complement: np.ndarray
    Z: np.ndarray
    U: np.ndarray


def partition(X: np.ndarray, selected: Sequence[int]) -> ModelPartition:
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    sel = np.unique(np.asarray(selected, dtype=int))
    if sel.size < 1:
        raise DataError("selected set is empty")
    if sel[0] < 0 or sel[-1] >= p:
        raise DataError("selected index out of range")
    comp = np.setdiff1d(np.arange(p), sel)
    return ModelPartition(sel, comp, X[:, sel], X[:, comp])


def load_csv(path, response: str | None = None) -> Dataset:
    """Read a comma-separated numeric table with a header row.

    The last column is the response unless ``response`` names another one.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {name!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at row {lineno}, column {name!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if len(header) < 2:
        raise DataError(f"{path}: need at least one predictor and a response column")
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, found {len(rows)}")
    table = np.asarray(rows, dtype=float)
    if response is None:
        r = len(header) - 1
    else:
        if response not in header:
            raise DataError(f"{path}: response column {response!r} not in header")
        r = header.index(response)
    keep = [j for j in range(len(header)) if j != r]
    return Dataset(table[:, keep], table[:, r], tuple(header[j] for j in keep))


def standardize(d: Dataset) -> tuple[Dataset, np.ndarray]:
    """Scale every column to unit mean square, ``||x_j||^2 / n = 1``.

    Columns are not centered and the response is left untouched.  Returns
    the scaled dataset and the divisors; a coefficient ``b`` fitted on the
    scaled design corresponds to ``b / scale`` on the original one.
    """
    X = d.design
    scale = np.sqrt(np.mean(X * X, axis=0))
    zero = np.flatnonzero(scale == 0.0)
    if zero.size:
        raise DataError(f"column {d.names[zero[0]]!r} has zero norm and cannot be standardized")
    # exact unit columns stay bit-identical
    scale = np.where(np.abs(scale - 1.0) <= 1e-15, 1.0, scale)
    return Dataset(X / scale, d.response, d.names), scale
