"""Interval-quality metrics and analysis helpers.

Per-sample metrics: width r - l; deficit, the shortfall to the nearer
endpoint when the target falls outside the interval; excess, the slack to
the nearer endpoint when it falls inside. Exactly one of deficit/excess
can be nonzero per sample, and averages are taken over all samples (the
indicator zeroes the inactive branch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .errors import (DegenerateInputError, EmptyInputError, InsufficientReplicatesError,
                     ShapeError, UndefinedCorrelationError)

PC1_TOLERANCE = 1e-9
PC1_MAX_ITER = 10_000


@dataclass
class IntervalReport:
    lower: np.ndarray
    upper: np.ndarray
    y: np.ndarray
    covered: np.ndarray
    width: np.ndarray
    deficit: np.ndarray
    excess: np.ndarray
    coverage: float
    avg_width: float
    avg_deficit: float
    avg_excess: float
    n_infinite: int

    @property
    def n_samples(self) -> int:
        return len(self.y)


def evaluate(lower: np.ndarray, upper: np.ndarray, ys: np.ndarray,
             widths: np.ndarray | None = None) -> IntervalReport:
    """Score intervals against targets; aggregates are plain means.

    Samples with infinite endpoints contribute infinite width (and excess);
    the aggregate width then reports +inf together with `n_infinite`.
    `widths` optionally supplies closed-form interval widths (e.g.
    2 * eps * sigma) in place of the endpoint difference, which carries
    rounding jitter across samples.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not lower.shape == upper.shape == ys.shape:
        raise ShapeError("lower, upper and ys must be aligned")
    if lower.size == 0:
        raise EmptyInputError("no samples to evaluate")
    if np.any(lower > upper):
        raise ShapeError("invariant violation: lower > upper")
    covered = (lower <= ys) & (ys <= upper)
    width = upper - lower if widths is None else np.asarray(widths, dtype=np.float64)
    if width.shape != ys.shape:
        raise ShapeError("widths must align with the samples")
    deficit = np.where(covered, 0.0, np.minimum(np.abs(ys - lower), np.abs(ys - upper)))
    excess = np.where(covered, np.minimum(ys - lower, upper - ys), 0.0)
    return IntervalReport(
        lower=lower, upper=upper, y=ys, covered=covered,
        width=width, deficit=deficit, excess=excess,
        coverage=float(np.mean(covered)),
        avg_width=float(np.mean(width)),
        avg_deficit=float(np.mean(deficit)),
        avg_excess=float(np.mean(excess)),
        n_infinite=int(np.sum(np.isinf(width))),
    )


def pc1_project(X: np.ndarray, tol: float = PC1_TOLERANCE) -> np.ndarray:
    """Projection onto the leading covariance eigenvector (power iteration).

    The data is centered internally; the sign is fixed so the
    largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError("pc1_project needs a 2-D matrix with >= 2 rows")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    if not np.any(cov):
        raise DegenerateInputError("zero covariance: all rows identical")
    rng = np.random.default_rng(0)
    v = rng.standard_normal(X.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(PC1_MAX_ITER):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:  # started orthogonal to the support of cov
            v = rng.standard_normal(X.shape[1])
            v /= np.linalg.norm(v)
            continue
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    j = int(np.argmax(np.abs(v)))
    if v[j] < 0:
        v = -v
    return Xc @ v


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Product-moment correlation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("pearson expects two aligned vectors")
    if a.size < 2:
        raise EmptyInputError("need at least 2 observations")
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    return float(np.clip(np.sum(da * db) / denom, -1.0, 1.0))


def sorted_metric_curve(per_sample_values: np.ndarray) -> list[tuple[int, float]]:
    """(rank, value) pairs ordered from largest to smallest (stable)."""
    values = np.asarray(per_sample_values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    return [(rank + 1, float(values[i])) for rank, i in enumerate(order)]


@dataclass
class GainCi:
    """t-interval over per-seed width reductions."""

    gains: np.ndarray
    level: float
    mean: float
    lower: float
    upper: float


def gain_ci(per_seed_gains: np.ndarray, level: float = 0.9) -> GainCi:
    gains = np.asarray(per_seed_gains, dtype=np.float64)
    k = gains.size
    if k < 2:
        raise InsufficientReplicatesError("confidence interval needs >= 2 seeds")
    mean = float(gains.mean())
    sd = float(gains.std(ddof=1))
    t = float(scipy_stats.t.ppf(0.5 + level / 2.0, k - 1))
    half = t * sd / np.sqrt(k)
    return GainCi(gains, level, mean, mean - half, mean + half)
