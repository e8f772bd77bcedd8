"""Tabular data ingestion, feature scaling and class-proportional splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TRANSFORM_KINDS = ("none", "min_max", "standardize")
_KIND_ALIASES = {"minmax": "min_max", "min-max": "min_max", "std": "standardize", "standardization": "standardize"}


class DatasetError(ValueError):
    """Raised for malformed input data or invalid split requests."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with one class label per row.

    ``class_ids`` keeps the order in which labels first appear; it fixes the
    positive class of binary problems and the tie order of argmax predictions.
    """

    features: np.ndarray
    labels: np.ndarray
    class_ids: tuple = field(default=())

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise DatasetError(f"expected {X.shape[0]} labels, got shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain NaN or infinite values")
        class_ids = tuple(self.class_ids) if self.class_ids else _first_appearance(y)
        unknown = set(y.tolist()) - set(class_ids)
        if unknown:
            raise DatasetError(f"labels {sorted(map(str, unknown))} missing from class_ids")
        X.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_ids", class_ids)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        """Rows ``rows`` as a new dataset sharing this one's class inventory."""
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows], self.class_ids)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.class_ids)

    def class_counts(self) -> dict:
        return {c: int(np.sum(self.labels == c)) for c in self.class_ids}


def _first_appearance(labels: np.ndarray) -> tuple:
    seen = {}
    for v in labels.tolist():
        seen.setdefault(v, None)
    return tuple(seen)


def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def _label_value(cell: str):
    value = _parse_float(cell)
    if value is None or not math.isfinite(value):
        return cell
    return int(value) if value.is_integer() else value


def load_csv(
    path: str | Path,
    label_column: str | int = -1,
    drop_columns: Sequence[str | int] = (),
) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    A header row is detected when the first row holds a non-numeric value in
    any feature column. ``label_column`` is a header name or a (possibly
    negative) column index. Columns in ``drop_columns`` are ignored, which is
    handy for identifier columns such as patient names.

    Error messages report rows by their 1-based line number in the file.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [(lineno, row) for lineno, row in enumerate(csv.reader(fh), start=1) if any(c.strip() for c in row)]
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DatasetError(f"{path} is empty")

    width = len(rows[0][1])
    first = [c.strip() for c in rows[0][1]]
    named = [c for c in (label_column, *drop_columns) if isinstance(c, str) and not _is_int(c)]
    header = first if named else None
    label_idx = _column_index(label_column, header, width)
    dropped = {_column_index(c, header, width) for c in drop_columns}
    feature_cols = [j for j in range(width) if j != label_idx and j not in dropped]
    if not feature_cols:
        raise DatasetError("no feature columns left")
    if header is None and any(_parse_float(first[j]) is None for j in feature_cols):
        header = first
    if header is not None:
        rows = rows[1:]

    X = np.empty((len(rows), len(feature_cols)))
    labels = []
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DatasetError(f"row {lineno}: expected {width} columns, found {len(row)}")
        for k, j in enumerate(feature_cols):
            value = _parse_float(row[j].strip())
            if value is None:
                name = header[j] if header else str(j)
                raise DatasetError(f"row {lineno}, column {name}: non-numeric value {row[j]!r}")
            X[r, k] = value
        labels.append(_label_value(row[label_idx].strip()))

    y = np.array(labels)
    data = Dataset(X, y)
    if data.n_classes < 2:
        raise DatasetError(f"{path}: need at least 2 distinct labels, found {data.n_classes}")
    return data


def _is_int(text: str) -> bool:
    return text.lstrip("-").isdigit()


def _column_index(col: str | int, header: list | None, width: int) -> int:
    if isinstance(col, str) and not _is_int(col):
        if header is None or col not in header:
            raise DatasetError(f"column {col!r} not found in header")
        return header.index(col)
    idx = int(col)
    if not -width <= idx < width:
        raise DatasetError(f"column index {idx} out of range for {width} columns")
    return idx % width


@dataclass(frozen=True, eq=False)
class TransformParams:
    """Per-feature affine map ``x -> (x - shift) / scale``; zero-scale columns map to 0."""

    kind: str
    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))

    @property
    def n(self) -> int:
        return self.shift.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n:
            raise DatasetError(f"transform fitted on {self.n} features, data has {X.shape[-1]}")
        if self.kind == "none":
            return X.copy()
        constant = self.scale == 0
        safe = np.where(constant, 1.0, self.scale)
        out = (X - self.shift) / safe
        out[..., constant] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformParams":
        return cls(d["kind"], d["shift"], d["scale"])


def population_std(X: np.ndarray) -> np.ndarray:
    """Column-wise standard deviation dividing by the row count.

    Constant columns report exactly 0; the float mean of identical values can
    miss them by an ulp and would otherwise leave a spurious tiny spread.
    """
    X = np.asarray(X, dtype=float)
    std = X.std(axis=0, ddof=0)
    std[X.max(axis=0) == X.min(axis=0)] = 0.0
    return std


def fit_transform(data: Dataset, kind: str) -> tuple[Dataset, TransformParams]:
    kind = _KIND_ALIASES.get(kind, kind)
    X = data.features
    if kind == "none":
        params = TransformParams("none", np.zeros(data.n), np.ones(data.n))
    elif kind == "min_max":
        lo = X.min(axis=0)
        params = TransformParams(kind, lo, X.max(axis=0) - lo)
    elif kind == "standardize":
        params = TransformParams(kind, X.mean(axis=0), population_std(X))
    else:
        raise ValueError(f"unknown transform {kind!r}; expected one of {TRANSFORM_KINDS}")
    return apply_transform(data, params), params


def apply_transform(data: Dataset, params: TransformParams) -> Dataset:
    return data.with_features(params.apply(data.features))


@dataclass(frozen=True)
class SplitSpec:
    """Holdout request: ``beta_percent`` of every class goes to training.

    Partitions are drawn with numpy's PCG64 generator seeded by the pair
    ``(seed, repeat_index)`` through ``SeedSequence``, so a given repeat is
    reproducible on its own without replaying earlier repeats.
    """

    beta_percent: float = 75.0
    seed: int = 0
    repeats: int = 1

    def __post_init__(self):
        if not 0 < self.beta_percent < 100:
            raise ValueError("beta_percent must lie strictly between 0 and 100")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_counts(class_counts: dict, beta_percent: float) -> dict:
    """Per-class training sizes.

    Each class gets ``round_half_up(beta * count)``, clamped to
    ``[1, count - 1]``. The largest class (first in order on ties) then
    absorbs the difference to ``round_half_up(beta * total)``, one
    observation at a time, within the same clamp.
    """
    frac = beta_percent / 100.0
    for c, count in class_counts.items():
        if count < 2:
            raise DatasetError(f"class {c!r} has {count} member(s); a split needs at least 2")
    counts = {c: min(max(_round_half_up(frac * k), 1), k - 1) for c, k in class_counts.items()}
    target = _round_half_up(frac * sum(class_counts.values()))
    largest = max(class_counts, key=lambda c: class_counts[c])
    k = class_counts[largest]
    while sum(counts.values()) < target and counts[largest] < k - 1:
        counts[largest] += 1
    while sum(counts.values()) > target and counts[largest] > 1:
        counts[largest] -= 1
    return counts


def split_indices(data: Dataset, spec: SplitSpec, repeat_index: int) -> tuple[np.ndarray, np.ndarray]:
    if repeat_index < 0:
        raise ValueError("repeat_index must be nonnegative")
    counts = train_counts(data.class_counts(), spec.beta_percent)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, repeat_index])))
    train = []
    for c in data.class_ids:
        members = np.flatnonzero(data.labels == c)
        train.append(rng.permutation(members)[: counts[c]])
    train_idx = np.sort(np.concatenate(train))
    mask = np.ones(data.m, dtype=bool)
    mask[train_idx] = False
    return train_idx, np.flatnonzero(mask)


def proportional_split(data: Dataset, spec: SplitSpec, repeat_index: int) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(data, spec, repeat_index)
    return data.subset(train_idx), data.subset(test_idx)
