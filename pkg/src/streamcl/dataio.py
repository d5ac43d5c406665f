"""Datasets, CSV input/output, wind-farm preprocessing and phase splitting.

CSV layout::

    # optional comment / provenance lines
    time,f1,f2,f3,f4,f5,f6,f7,power
    0,0.1,...,0.42

``time`` and ``power`` are optional columns; without ``power`` the dataset is
unsupervised. Without ``time`` a 0-based hour index is synthesized.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NormalizationError, ParseError, SchemaError

log = logging.getLogger(__name__)

DEFAULT_PHASES = (1000, 10000, 1000)
ZERO_RUN_LIMIT = 24


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: Optional[float] = None
    time_index: int = 0


@dataclass
class Dataset:
    """Time-ordered feature matrix with optional scalar targets."""

    X: np.ndarray
    y: Optional[np.ndarray] = None
    time: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if self.y.shape[0] != self.X.shape[0]:
                raise ValueError("targets and features differ in length")
        if self.time is None:
            self.time = np.arange(self.X.shape[0], dtype=np.int64)
        else:
            self.time = np.asarray(self.time, dtype=np.int64)

    @property
    def supervised(self) -> bool:
        return self.y is not None

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, key):
        if isinstance(key, slice):
            return Dataset(self.X[key], None if self.y is None else self.y[key],
                           self.time[key], dict(self.meta))
        target = None if self.y is None else float(self.y[key])
        return Sample(self.X[key], target, int(self.time[key]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_y = (self.y is None and other.y is None) or (
            self.y is not None and other.y is not None and np.array_equal(self.y, other.y))
        return (np.array_equal(self.X, other.X) and same_y
                and np.array_equal(self.time, other.time))

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        sup = {p.supervised for p in parts}
        if len(sup) != 1:
            raise ValueError("cannot mix supervised and unsupervised datasets")
        y = np.concatenate([p.y for p in parts]) if sup.pop() else None
        return Dataset(np.vstack([p.X for p in parts]), y,
                       np.concatenate([p.time for p in parts]), dict(parts[0].meta))


def _float(text, line, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} in column {column!r}", line) from None


def load_csv(path, dims: Optional[int] = 7) -> Dataset:
    """Parse a dataset file; ``dims=None`` accepts any number of feature columns."""
    path = Path(path)
    comments = []
    header = None
    rows_x, rows_y, rows_t = [], [], []
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if line.lstrip().startswith("#"):
                comments.append(line.strip()[1:].strip())
                continue
            row = next(csv.reader([line]))
            if header is None:
                header = [c.strip() for c in row]
                has_time = header[0] == "time"
                has_power = header[-1] == "power"
                feats = header[int(has_time):len(header) - int(has_power)]
                expected = [f"f{i + 1}" for i in range(len(feats))]
                if not feats or feats != expected:
                    raise SchemaError(f"unexpected header {header}", lineno)
                if dims is not None and len(feats) != dims:
                    raise SchemaError(f"expected {dims} feature columns, found {len(feats)}",
                                      lineno)
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} columns, found {len(row)}", lineno)
            vals = [_float(v, lineno, c) for v, c in zip(row, header)]
            if has_time:
                rows_t.append(int(vals[0]))
            rows_x.append(vals[int(has_time):int(has_time) + len(feats)])
            if has_power:
                rows_y.append(vals[-1])
    if header is None:
        raise SchemaError(f"{path}: no header row")
    X = np.array(rows_x, dtype=np.float64).reshape(-1, len(feats))
    return Dataset(X, np.array(rows_y) if has_power else None,
                   np.array(rows_t) if has_time else None,
                   {"source": str(path), "comments": comments})


def write_csv(path, data: Dataset, comments: Sequence[str] = ()) -> None:
    """Write ``data`` with 17 significant digits so a reload is bit-exact."""
    header = ["time"] + [f"f{i + 1}" for i in range(data.dims)]
    if data.supervised:
        header.append("power")
    with Path(path).open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(header) + "\n")
        for i in range(len(data)):
            vals = [str(int(data.time[i]))] + [f"{v:.17g}" for v in data.X[i]]
            if data.supervised:
                vals.append(f"{data.y[i]:.17g}")
            fh.write(",".join(vals) + "\n")


def zero_run_mask(power: np.ndarray, limit: int = ZERO_RUN_LIMIT) -> np.ndarray:
    """True for entries kept: drops every maximal zero-power run longer than ``limit``."""
    keep = np.ones(power.shape[0], dtype=bool)
    zero = power == 0
    i, n = 0, power.shape[0]
    while i < n:
        if not zero[i]:
            i += 1
            continue
        j = i
        while j < n and zero[j]:
            j += 1
        if j - i > limit:
            keep[i:j] = False
        i = j
    return keep


def preprocess(raw: Dataset, capacity: Optional[float] = None,
               bounds: Optional[np.ndarray] = None) -> Dataset:
    """Drop long zero-power stretches, min-max scale features, scale power by capacity.

    Scaling bounds are computed once on the whole (filtered) dataset and stored
    in ``meta["feature_bounds"]``; a dataset that already carries them is not
    rescaled, which makes the operation idempotent.
    """
    if not raw.supervised:
        raise ConfigurationError("preprocessing needs a power column")
    keep = zero_run_mask(raw.y)
    dropped = int((~keep).sum())
    if dropped:
        log.info("removed %d time points inside zero-power runs longer than %d",
                 dropped, ZERO_RUN_LIMIT)
    meta = dict(raw.meta)
    X, y = raw.X[keep], raw.y[keep]
    if "feature_bounds" not in meta:
        if bounds is None:
            lo, hi = X.min(axis=0), X.max(axis=0)
        else:
            lo, hi = np.asarray(bounds, dtype=np.float64)
        for col in np.flatnonzero(hi == lo):
            raise NormalizationError(f"feature column f{col + 1} is constant")
        X = (X - lo) / (hi - lo)
        meta["feature_bounds"] = np.vstack([lo, hi])
    if capacity is not None and not meta.get("power_scaled"):
        y = y / capacity
        meta["power_scaled"] = True
    return Dataset(X, y, raw.time[keep], meta)


class PhaseSplit(NamedTuple):
    warm_up: Dataset
    update: Dataset
    evaluation: Dataset


def split_phases(data: Dataset, sizes: Sequence[int] = DEFAULT_PHASES) -> PhaseSplit:
    if len(sizes) != 3 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"three positive phase sizes expected, got {sizes}")
    need = sum(sizes)
    if len(data) < need:
        raise ConfigurationError(f"dataset has {len(data)} samples, phases need {need}")
    surplus = len(data) - need
    if surplus:
        log.info("discarding %d trailing samples beyond the three phases", surplus)
    a, b = sizes[0], sizes[0] + sizes[1]
    return PhaseSplit(data[:a], data[a:b], data[b:need])
