"""Datasets: synthetic generator, CSV ingestion, standardization, splits.

The synthetic task draws a latent L ~ U(0,1) per sample, places 10 random
points on a circle of radius L centered at (0, L) (base touching the
origin), and attaches a signed residual whose magnitude follows
|N(step(L), 0.1)| with a two-band step function. The splits follow a
cascade of 80-20 cuts: test off the full set, then a residual-fitting set,
then calibration, leaving the rest for training.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, CsvParseError, InsufficientDataError, ShapeError, SplitIntegrityError

N_CIRCLE_PAIRS = 10
RESIDUAL_NOISE_SD = 0.1


def step(l: float):
    """Two-band step: 1.5 on (0.2,0.4) and (0.6,0.8) open intervals, else 0.1."""
    l = np.asarray(l, dtype=np.float64)
    high = ((l > 0.2) & (l < 0.4)) | ((l > 0.6) & (l < 0.8))
    out = np.where(high, 1.5, 0.1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SyntheticSample:
    latent: float
    features: np.ndarray  # 20 values: 10 interleaved (x, y) circle points
    residual: float       # signed


def synth_generate(n: int, seed: int = 0) -> list[SyntheticSample]:
    """Draw n synthetic samples (latent, circle features, signed residual)."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    latent = rng.random(n)
    theta = rng.random((n, N_CIRCLE_PAIRS)) * (2.0 * math.pi)
    magnitude = np.abs(rng.normal(step(latent), RESIDUAL_NOISE_SD))
    sign = rng.integers(0, 2, size=n) * 2 - 1
    feats = np.empty((n, 2 * N_CIRCLE_PAIRS))
    feats[:, 0::2] = latent[:, None] * np.sin(theta)
    feats[:, 1::2] = latent[:, None] * (1.0 - np.cos(theta))
    return [SyntheticSample(float(latent[i]), feats[i], float(sign[i] * magnitude[i]))
            for i in range(n)]


def synth_matrices(samples: list[SyntheticSample]):
    """Stack samples into (X, y, latent) arrays; y is the signed residual."""
    X = np.stack([s.features for s in samples])
    y = np.array([s.residual for s in samples])
    latent = np.array([s.latent for s in samples])
    return X, y, latent


# ---------------------------------------------------------------------------
# tabular container + standardization
# ---------------------------------------------------------------------------

@dataclass
class TabularDataset:
    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)
    target_name: str | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ShapeError("X must be 2-D")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.shape[0] != self.X.shape[0]:
                raise ShapeError(f"{self.X.shape[0]} rows vs {self.y.shape[0]} targets")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.X.shape[1])]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


@dataclass
class Scaler:
    """Feature and target scaling statistics from one fitting split."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    zero_variance: np.ndarray  # flags for columns whose std was replaced by 1
    y_scale: float = 1.0

    def transform_X(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def inverse_X(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.feature_std + self.feature_mean

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) / self.y_scale

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.y_scale


def fit_scaler(X: np.ndarray, y: np.ndarray | None = None) -> Scaler:
    """Zero-mean/unit-variance feature stats; target scale is mean |y|."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise InsufficientDataError("cannot fit a scaler on an empty split")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    zero = std == 0.0
    std = np.where(zero, 1.0, std)
    y_scale = 1.0
    if y is not None and len(y) > 0:
        s = float(np.mean(np.abs(y)))
        y_scale = s if s > 0 else 1.0
    return Scaler(mean, std, zero, y_scale)


def standardize(fit_split: TabularDataset, *apply_to: TabularDataset):
    """Standardize datasets with stats fit on `fit_split`.

    Returns ([standardized fit_split, *standardized apply_to], scaler).
    """
    scaler = fit_scaler(fit_split.X, fit_split.y)
    out = []
    for ds in (fit_split, *apply_to):
        y = scaler.transform_y(ds.y) if ds.y is not None else None
        out.append(TabularDataset(scaler.transform_X(ds.X), y,
                                  list(ds.feature_names), ds.target_name))
    return out, scaler


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class SplitAssignment:
    """Disjoint index partition train / res / cal / test.

    `labeled_train` defaults to all of train; `unlabeled_train` rows are
    visible only to the pretext stage.
    """

    train: np.ndarray
    res: np.ndarray
    cal: np.ndarray
    test: np.ndarray
    labeled_train: np.ndarray | None = None
    unlabeled_train: np.ndarray | None = None

    def __post_init__(self):
        if self.labeled_train is None:
            self.labeled_train = self.train
            self.unlabeled_train = np.array([], dtype=np.int64)

    def validate(self, n: int):
        parts = [self.train, self.res, self.cal, self.test]
        total = np.concatenate(parts)
        if len(np.unique(total)) != len(total):
            raise SplitIntegrityError("split index sets overlap")
        if len(total) != n or total.min() < 0 or total.max() >= n:
            raise SplitIntegrityError(f"split does not cover exactly 0..{n - 1}")


def split(n: int, seed: int = 0) -> SplitAssignment:
    """Cascaded 80-20 split: test, then res, then cal, remainder train."""
    n_test = int(n * 0.2)
    n_res = int((n - n_test) * 0.2)
    n_cal = int((n - n_test - n_res) * 0.2)
    n_train = n - n_test - n_res - n_cal
    if min(n_test, n_res, n_cal, n_train) < 1:
        raise InsufficientDataError(f"n={n} leaves an empty split part")
    perm = np.random.default_rng(seed).permutation(n)
    test = perm[:n_test]
    res = perm[n_test:n_test + n_res]
    cal = perm[n_test + n_res:n_test + n_res + n_cal]
    train = perm[n_test + n_res + n_cal:]
    return SplitAssignment(np.sort(train), np.sort(res), np.sort(cal), np.sort(test))


def label_mask(train_indices: np.ndarray, p: float, seed: int = 0):
    """Seeded labeled/unlabeled partition of the training indices.

    ceil(p * n) rows stay labeled; the rest feed only the pretext stage.
    """
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"label fraction must be in (0,1], got {p}")
    train_indices = np.asarray(train_indices)
    n = len(train_indices)
    k = math.ceil(p * n)
    pick = np.random.default_rng(seed).permutation(n)
    labeled = np.sort(train_indices[pick[:k]])
    unlabeled = np.sort(train_indices[pick[k:]])
    return labeled, unlabeled


def apply_label_mask(assignment: SplitAssignment, p: float, seed: int = 0) -> SplitAssignment:
    labeled, unlabeled = label_mask(assignment.train, p, seed)
    return SplitAssignment(assignment.train, assignment.res, assignment.cal,
                           assignment.test, labeled, unlabeled)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path: str, target_column: str) -> TabularDataset:
    """Load a numeric CSV with a header row; the target column is split out.

    Rejects ragged rows and non-finite or unparsable cells, naming the
    offending row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise CsvParseError(f"{path}: target column {target_column!r} not in header {header}")
        t_idx = header.index(target_column)
        rows = []
        for r, cells in enumerate(reader, start=2):  # header is line 1
            if len(cells) != len(header):
                raise CsvParseError(f"{path}: row {r} has {len(cells)} cells, expected {len(header)}")
            parsed = []
            for c, cell in enumerate(cells):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(f"{path}: row {r}, column {header[c]!r}: "
                                        f"cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise CsvParseError(f"{path}: row {r}, column {header[c]!r}: "
                                        f"non-finite value {cell!r}")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    y = arr[:, t_idx]
    X = np.delete(arr, t_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != t_idx]
    return TabularDataset(X, y, names, target_column)
