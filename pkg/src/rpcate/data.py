"""Tabular hybrid-modeling data: CSV ingest, pseudo-sequential sorting and
pseudo-image windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .tensor import Tensor, gather_rows, reshape

TRUE_COLUMN = "y_true"
ME_COLUMN = "y_me"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class Dataset:
    """Features plus actual and mechanistic outputs.

    ``y`` is always recomputed as ``y_true - y_me``; it is never read from disk.
    """

    X: np.ndarray
    y_true: np.ndarray
    y_me: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise DataError(f"features must be a non-empty m×n array, got shape {self.X.shape}")
        m, n = self.X.shape
        self.y_true = np.asarray(self.y_true, dtype=np.float64).reshape(-1)
        self.y_me = np.asarray(self.y_me, dtype=np.float64).reshape(-1)
        if self.y_true.shape[0] != m or self.y_me.shape[0] != m:
            raise DataError(
                f"row count mismatch: X has {m}, y_true {self.y_true.shape[0]}, y_me {self.y_me.shape[0]}"
            )
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(n)]
        if len(self.feature_names) != n:
            raise DataError(f"{len(self.feature_names)} feature names for {n} columns")
        self.feature_names = list(self.feature_names)

    @property
    def y(self) -> np.ndarray:
        return self.y_true - self.y_me

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.X[rows], self.y_true[rows], self.y_me[rows], list(self.feature_names))

    def feature_index(self, feature: Union[int, str]) -> int:
        if isinstance(feature, str):
            if feature not in self.feature_names:
                raise DataError(f"unknown feature {feature!r}; have {self.feature_names}")
            return self.feature_names.index(feature)
        idx = int(feature)
        if not 0 <= idx < self.n:
            raise DataError(f"feature index {idx} out of range for {self.n} features")
        return idx


def load_csv(path: Union[str, Path], sort_feature_name: Optional[str] = None) -> Dataset:
    """Read a dataset; every column other than ``y_true``/``y_me`` is a feature.

    Lines starting with ``#`` are ignored. If ``sort_feature_name`` is given
    it must name one of the feature columns.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [(i, line) for i, line in enumerate(fh, start=1) if not line.lstrip().startswith("#")]
    lines = [(i, line) for i, line in lines if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    reader = csv.reader([line for _, line in lines])
    header = [h.strip() for h in next(reader)]
    for required in (TRUE_COLUMN, ME_COLUMN):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    features = [h for h in header if h not in (TRUE_COLUMN, ME_COLUMN)]
    if not features:
        raise DataError(f"{path}: no feature columns")
    if sort_feature_name is not None and sort_feature_name not in features:
        raise DataError(f"{path}: missing sort feature column {sort_feature_name!r}")

    rows = []
    for (lineno, _), cells in zip(lines[1:], reader):
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
        values = []
        for col, cell in zip(header, cells):
            try:
                values.append(float(cell))
            except ValueError:
                raise DataError(f"{path}:{lineno}: column {col!r}: non-numeric value {cell!r}") from None
        rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(table)):
        raise DataError(f"{path}: non-finite values present")
    cols = {h: j for j, h in enumerate(header)}
    return Dataset(
        X=table[:, [cols[f] for f in features]],
        y_true=table[:, cols[TRUE_COLUMN]],
        y_me=table[:, cols[ME_COLUMN]],
        feature_names=features,
    )


def save_csv(d: Dataset, path: Union[str, Path]) -> None:
    """Write ``d`` in the schema :func:`load_csv` reads (floats in shortest round-trip form)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(d.feature_names) + [TRUE_COLUMN, ME_COLUMN])
        for i in range(d.m):
            writer.writerow([repr(float(v)) for v in d.X[i]] + [repr(float(d.y_true[i])), repr(float(d.y_me[i]))])


@dataclass
class PsdView:
    X: np.ndarray
    y: np.ndarray
    perm: np.ndarray
    sort_feature_index: int

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv


def psd_order(column: np.ndarray) -> np.ndarray:
    """Stable ascending argsort: ties keep their original row order."""
    return np.argsort(np.asarray(column), kind="stable")


def to_psd(d: Dataset, x_prime: int) -> PsdView:
    if not 0 <= x_prime < d.n:
        raise DataError(f"sort column {x_prime} out of range for {d.n} features")
    perm = psd_order(d.X[:, x_prime])
    return PsdView(X=d.X[perm], y=d.y[perm], perm=perm, sort_feature_index=x_prime)


def unsort_predictions(p, view: PsdView):
    """Put PSD-ordered predictions back into original dataset order."""
    arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    if arr.shape[0] != view.perm.size:
        raise DataError(f"{arr.shape[0]} predictions for {view.perm.size} samples")
    out = np.empty_like(arr)
    out[view.perm] = arr
    return Tensor(out) if isinstance(p, Tensor) else out


def cyclic_windows(m: int, w: int) -> np.ndarray:
    """Index map (m×w): window ``i`` covers rows ``(i, …, i+w-1) mod m``."""
    if w < 1:
        raise DataError(f"window size must be ≥ 1, got {w}")
    if w > m:
        raise DataError(f"window size {w} exceeds the {m} available rows")
    return (np.arange(m)[:, None] + np.arange(w)[None, :]) % m


def window_side(w: int) -> int:
    k = math.isqrt(w) if w >= 1 else 0
    if k < 1 or k * k != w:
        raise DataError(f"window size {w} is not a perfect square")
    return k


@dataclass
class PidTensor:
    data: Tensor
    w: int
    m: int

    @property
    def k(self) -> int:
        return math.isqrt(self.w)


def to_pid(a: Tensor, w: int) -> PidTensor:
    """Cyclic windows of ``a`` (m×n) reshaped to m×k×k×n, rows filling each k×k grid row-major."""
    k = window_side(w)
    m, n = a.shape
    idx = cyclic_windows(m, w)
    z = gather_rows(a, idx.reshape(-1))
    return PidTensor(data=reshape(z, (m, k, k, n)), w=w, m=m)


@dataclass
class MinMaxScaler:
    """Per-feature min-max scaling fitted on one split and reused on others."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        return cls(lo=X.min(axis=0), hi=X.max(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (X - self.lo) / span

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(lo=np.array(d["lo"], dtype=np.float64), hi=np.array(d["hi"], dtype=np.float64))


def split_dataset(d: Dataset, eval_count: int, seed: int, shuffle: bool = True) -> tuple[Dataset, Dataset]:
    """Hold out ``eval_count`` rows; with ``shuffle`` the held-out rows are a seeded random draw."""
    if not 0 < eval_count < d.m:
        raise DataError(f"eval_count must be in (0, {d.m}), got {eval_count}")
    order = np.random.default_rng(seed).permutation(d.m) if shuffle else np.arange(d.m)
    return d.subset(np.sort(order[: d.m - eval_count])), d.subset(np.sort(order[d.m - eval_count:]))

