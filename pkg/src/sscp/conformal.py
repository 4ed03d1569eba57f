"""Conformal calibration engine.

Implements split-conformal calibration around a fixed predictive model:
plain absolute-residual calibration (ICP), residual-normalized calibration
(CRF), CRF with a self-supervised difficulty feature added to the
normalizer input (SSCP), a sanity variant that uses the pretext error
directly as the normalizer (SSL-NORM), and conformalized quantile
regression with and without the self-supervised feature (CQR, CQR-SSCP).

The critical score is always the ceil((n_cal + 1) * (1 - alpha))-th
smallest calibration score; when that rank exceeds n_cal the intervals are
infinite rather than an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import forest as forest_mod
from . import nn, pretext
from .data import SplitAssignment
from .errors import ConfigurationError, EmptyCalibrationError, PositivityError, ShapeError
from .seeding import stable_hash64

DEFAULT_HIDDEN = (64, 64)
SSL_NORM_FLOOR = 1e-6


class Kind(str, Enum):
    ICP = "ICP"
    CRF = "CRF"
    SSCP = "SSCP"
    SSL_NORM = "SSL_NORM"
    CQR = "CQR"
    CQR_SSCP = "CQR_SSCP"


class EncoderMode(str, Enum):
    SHARED = "shared"
    INDEPENDENT = "independent"


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.1
    kind: Kind = Kind.SSCP
    encoder_mode: EncoderMode = EncoderMode.INDEPENDENT

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must be in (0,1), got {self.alpha}")


# ---------------------------------------------------------------------------
# score-level operations
# ---------------------------------------------------------------------------

def quantile_index(n_cal: int, alpha: float) -> int | None:
    """1-based rank of the critical score; None when it overflows n_cal."""
    if n_cal == 0:
        raise EmptyCalibrationError("no calibration scores")
    if n_cal < 0:
        raise ConfigurationError(f"n_cal must be >= 0, got {n_cal}")
    k = math.ceil((n_cal + 1) * (1.0 - alpha))
    return k if k <= n_cal else None


def icp_calibrate(scores: np.ndarray, alpha: float) -> float:
    """Critical nonconformity score from nonnegative calibration scores."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyCalibrationError("no calibration scores")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise ConfigurationError("calibration scores must be finite and nonnegative")
    k = quantile_index(scores.size, alpha)
    if k is None:
        return math.inf
    return float(np.sort(scores, kind="stable")[k - 1])


def crf_score(y, f_x, sigma_x):
    """Normalized nonconformity |y - f(x)| / sigma(x)."""
    sigma_x = np.asarray(sigma_x, dtype=np.float64)
    if np.any(sigma_x <= 0):
        raise PositivityError("normalizer output must be strictly positive")
    out = np.abs(np.asarray(y, dtype=np.float64) - np.asarray(f_x, dtype=np.float64)) / sigma_x
    return float(out) if out.ndim == 0 else out


def crf_interval(f_x, epsilon: float, sigma_x):
    """[f(x) - eps * sigma(x), f(x) + eps * sigma(x)]; whole line when eps=inf."""
    sigma_x = np.asarray(sigma_x, dtype=np.float64)
    if np.any(sigma_x <= 0):
        raise PositivityError("normalizer output must be strictly positive")
    if epsilon < 0:
        raise ConfigurationError("epsilon must be nonnegative")
    f_x = np.asarray(f_x, dtype=np.float64)
    half = epsilon * sigma_x
    return f_x - half, f_x + half


def cqr_calibrate(lowers, uppers, ys, alpha: float) -> float:
    """Critical score for quantile heads: rank statistic of max(l-y, y-r).

    May be negative (intervals shrink). Overflow of the rank yields +inf.
    """
    lowers = np.asarray(lowers, dtype=np.float64)
    uppers = np.asarray(uppers, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not lowers.shape == uppers.shape == ys.shape:
        raise ShapeError("lowers, uppers and ys must be aligned")
    if lowers.size == 0:
        raise EmptyCalibrationError("no calibration scores")
    scores = np.maximum(lowers - ys, ys - uppers)
    k = quantile_index(scores.size, alpha)
    if k is None:
        return math.inf
    return float(np.sort(scores, kind="stable")[k - 1])


def cqr_interval(lowers, uppers, epsilon: float):
    return (np.asarray(lowers, dtype=np.float64) - epsilon,
            np.asarray(uppers, dtype=np.float64) + epsilon)


def ssl_norm_sigma(err, floor: float = SSL_NORM_FLOOR):
    """Pretext error used directly as the normalizer: sigma = err + floor."""
    err = np.asarray(err, dtype=np.float64)
    if np.any(err < 0):
        raise PositivityError("pretext errors must be nonnegative")
    out = err + floor
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# normalizer model
# ---------------------------------------------------------------------------

def normalizer_floor(residual_targets: np.ndarray) -> float:
    """Positivity floor: max(1e-6, 1% of the mean absolute residual)."""
    return max(1e-6, 0.01 * float(np.mean(np.abs(residual_targets))))


class Normalizer:
    """Regression model of absolute residuals, clamped below at `floor`."""

    def __init__(self, model, backend: str, floor: float, uses_ss_feature: bool):
        self.model = model
        self.backend = backend
        self.floor = floor
        self.uses_ss_feature = uses_ss_feature

    def predict(self, features: np.ndarray) -> np.ndarray:
        if self.backend == "mlp":
            raw = nn.mlp_forward(self.model, features)[:, 0]
        elif self.backend == "forest":
            raw = forest_mod.forest_predict(self.model, features)
        elif self.backend == "constant":
            raw = np.full(np.asarray(features).shape[0], self.model, dtype=np.float64)
        else:
            raise ConfigurationError(f"unknown normalizer backend {self.backend!r}")
        return np.maximum(raw, self.floor)

    @classmethod
    def constant(cls, value: float, floor: float = 1e-6) -> "Normalizer":
        return cls(float(value), "constant", floor, uses_ss_feature=False)


def train_normalizer(features: np.ndarray, residual_targets: np.ndarray,
                     use_ss: bool, backend: str = "mlp", seed: int = 0,
                     n_trees: int = 1000) -> Normalizer:
    """Fit the residual model sigma on (features, |y - f(x)|) pairs.

    With `use_ss` the caller has already appended the pretext-error column
    to `features`; the flag is recorded so prediction-time augmentation
    matches.
    """
    features = np.asarray(features, dtype=np.float64)
    residual_targets = np.asarray(residual_targets, dtype=np.float64)
    if np.any(residual_targets < 0):
        raise ConfigurationError("residual targets must be nonnegative")
    floor = normalizer_floor(residual_targets)
    if backend == "mlp":
        cfg = nn.MlpConfig(layer_sizes=(features.shape[1], *DEFAULT_HIDDEN, 1),
                           seed=stable_hash64(seed, "normalizer-init"))
        model = nn.mlp_init(cfg)
        model = nn.train_supervised(model, features, residual_targets, nn.MSE,
                                    seed=stable_hash64(seed, "normalizer-train"))
    elif backend == "forest":
        model = forest_mod.forest_fit(features, residual_targets,
                                      forest_mod.ForestConfig(n_trees=n_trees,
                                                              seed=stable_hash64(seed, "normalizer-forest")))
    else:
        raise ConfigurationError(f"unknown normalizer backend {backend!r}")
    return Normalizer(model, backend, floor, uses_ss_feature=use_ss)


# ---------------------------------------------------------------------------
# calibrated predictors
# ---------------------------------------------------------------------------

class CalibratedConformal:
    """A fitted conformal predictor: critical score plus model references."""

    def __init__(self, kind: Kind, alpha: float, epsilon: float,
                 f: nn.Mlp | None = None,
                 normalizer: Normalizer | None = None,
                 ss_model: pretext.SsModel | None = None,
                 quantile_model: nn.Mlp | None = None,
                 ss_floor: float = SSL_NORM_FLOOR,
                 crossing_rate: float = 0.0):
        self.kind = kind
        self.alpha = alpha
        self.epsilon = epsilon
        self.f = f
        self.normalizer = normalizer
        self.ss_model = ss_model
        self.quantile_model = quantile_model
        self.ss_floor = ss_floor
        self.crossing_rate = crossing_rate

    def predict_point(self, X: np.ndarray) -> np.ndarray:
        """Predictive-model output (zero when no model, e.g. synthetic demo)."""
        X = np.asarray(X, dtype=np.float64)
        if self.f is None:
            return np.zeros(X.shape[0])
        return nn.mlp_forward(self.f, X)[:, 0]

    def ss_errors(self, X: np.ndarray) -> np.ndarray | None:
        if self.ss_model is None:
            return None
        return self.ss_model.errors(X)

    def sigma_values(self, X: np.ndarray) -> np.ndarray:
        """Normalizer output per row (ones for ICP/CQR kinds)."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == Kind.ICP or self.kind in (Kind.CQR, Kind.CQR_SSCP):
            return np.ones(X.shape[0])
        if self.kind == Kind.SSL_NORM:
            return ssl_norm_sigma(self.ss_model.errors(X), self.ss_floor)
        feats = X
        if self.normalizer.uses_ss_feature:
            feats = pretext.augment_features(X, self.ss_model.errors(X))
        return self.normalizer.predict(feats)

    def quantile_heads(self, X: np.ndarray):
        """Per-sample (lower, upper) head outputs, swapped where they cross."""
        feats = np.asarray(X, dtype=np.float64)
        if self.ss_model is not None:
            feats = pretext.augment_features(feats, self.ss_model.errors(feats))
        out = nn.mlp_forward(self.quantile_model, feats)
        lo = np.minimum(out[:, 0], out[:, 1])
        hi = np.maximum(out[:, 0], out[:, 1])
        return lo, hi

    def intervals(self, X: np.ndarray):
        """Prediction interval [l(x), r(x)] per row of X."""
        if self.kind in (Kind.CQR, Kind.CQR_SSCP):
            lo, hi = self.quantile_heads(X)
            return cqr_interval(lo, hi, self.epsilon)
        fx = self.predict_point(X)
        return crf_interval(fx, self.epsilon, self.sigma_values(X))

    def width_values(self, X: np.ndarray) -> np.ndarray:
        """Exact interval widths.

        For the residual family the width is 2 * eps * sigma(x) in closed
        form (bit-constant for ICP), avoiding the endpoint-subtraction
        rounding that would jitter mathematically equal widths.
        """
        if self.kind in (Kind.CQR, Kind.CQR_SSCP):
            lo, hi = self.intervals(X)
            return hi - lo
        return 2.0 * self.epsilon * self.sigma_values(X)


def default_regressor_config(d_in: int, d_out: int = 1, seed: int = 0) -> nn.MlpConfig:
    return nn.MlpConfig(layer_sizes=(d_in, *DEFAULT_HIDDEN, d_out), seed=seed)


def train_predictor(X: np.ndarray, y: np.ndarray, seed: int = 0) -> nn.Mlp:
    """The shared predictive model f: MSE-trained dense network."""
    cfg = default_regressor_config(X.shape[1], 1, seed=stable_hash64(seed, "model-f-init"))
    model = nn.mlp_init(cfg)
    return nn.train_supervised(model, X, y, nn.MSE, seed=stable_hash64(seed, "model-f-train"))


# ---------------------------------------------------------------------------
# pipeline fits
# ---------------------------------------------------------------------------

def _check_split(X: np.ndarray, split: SplitAssignment):
    split.validate(X.shape[0])


def fit_icp(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
            alpha: float = 0.1, f: nn.Mlp | None = None, seed: int = 0) -> CalibratedConformal:
    """Constant-width calibration from absolute residuals."""
    _check_split(X, split)
    if f is None:
        f = train_predictor(X[split.labeled_train], y[split.labeled_train], seed)
    resid = np.abs(y[split.cal] - nn.mlp_forward(f, X[split.cal])[:, 0])
    eps = icp_calibrate(resid, alpha)
    return CalibratedConformal(Kind.ICP, alpha, eps, f=f)


def sscp_fit(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
             pretext_kind: pretext.PretextKind | None = None,
             alpha: float = 0.1, f: nn.Mlp | None = None,
             use_ss: bool = True, backend: str = "mlp", n_trees: int = 1000,
             ss_model: pretext.SsModel | None = None,
             pretext_on: str = "all", seed: int = 0) -> CalibratedConformal:
    """Residual-normalized calibration, optionally with the pretext feature.

    Pipeline: train (or reuse) f on the labeled training rows; with
    `use_ss`, fit the pretext head on the frozen encoder and append its
    per-sample error to the normalizer input; train sigma on the
    residual-fitting split; calibrate normalized scores on the calibration
    split. With `use_ss` off this is exactly the plain CRF pipeline.
    """
    _check_split(X, split)
    if f is None:
        f = train_predictor(X[split.labeled_train], y[split.labeled_train], seed)

    ss = None
    if use_ss:
        if ss_model is not None:
            ss = ss_model
        else:
            if pretext_kind is None:
                raise ConfigurationError("use_ss requires a pretext kind or a trained ss_model")
            rows = (split.labeled_train if pretext_on == "labeled"
                    else np.concatenate([split.labeled_train, split.unlabeled_train]))
            ss = pretext.train_pretext(nn.extract_encoder(f), pretext_kind, X[rows],
                                       seed=stable_hash64(seed, "pretext"))

    feats_res = X[split.res]
    feats_cal = X[split.cal]
    if ss is not None:
        feats_res = pretext.augment_features(feats_res, ss.errors(X[split.res]))
        feats_cal = pretext.augment_features(feats_cal, ss.errors(X[split.cal]))

    resid_res = np.abs(y[split.res] - nn.mlp_forward(f, X[split.res])[:, 0])
    sigma = train_normalizer(feats_res, resid_res, use_ss=ss is not None,
                             backend=backend, seed=seed, n_trees=n_trees)

    f_cal = nn.mlp_forward(f, X[split.cal])[:, 0]
    scores = crf_score(y[split.cal], f_cal, sigma.predict(feats_cal))
    eps = icp_calibrate(scores, alpha)
    kind = Kind.SSCP if ss is not None else Kind.CRF
    return CalibratedConformal(kind, alpha, eps, f=f, normalizer=sigma, ss_model=ss)


def fit_crf(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
            alpha: float = 0.1, f: nn.Mlp | None = None,
            backend: str = "mlp", n_trees: int = 1000, seed: int = 0) -> CalibratedConformal:
    """Plain conformal residual fitting (the use_ss-off pipeline)."""
    return sscp_fit(X, y, split, None, alpha=alpha, f=f, use_ss=False,
                    backend=backend, n_trees=n_trees, seed=seed)


def fit_ssl_norm(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
                 pretext_kind: pretext.PretextKind | None = None,
                 alpha: float = 0.1, f: nn.Mlp | None = None,
                 ss_model: pretext.SsModel | None = None,
                 floor: float = SSL_NORM_FLOOR,
                 pretext_on: str = "all", seed: int = 0) -> CalibratedConformal:
    """Sanity variant: the pretext error itself is the normalizer."""
    _check_split(X, split)
    if f is None:
        f = train_predictor(X[split.labeled_train], y[split.labeled_train], seed)
    if ss_model is None:
        if pretext_kind is None:
            raise ConfigurationError("need a pretext kind or a trained ss_model")
        rows = (split.labeled_train if pretext_on == "labeled"
                else np.concatenate([split.labeled_train, split.unlabeled_train]))
        ss_model = pretext.train_pretext(nn.extract_encoder(f), pretext_kind, X[rows],
                                         seed=stable_hash64(seed, "pretext"))
    sigma_cal = ssl_norm_sigma(ss_model.errors(X[split.cal]), floor)
    scores = crf_score(y[split.cal], nn.mlp_forward(f, X[split.cal])[:, 0], sigma_cal)
    eps = icp_calibrate(scores, alpha)
    return CalibratedConformal(Kind.SSL_NORM, alpha, eps, f=f, ss_model=ss_model,
                               ss_floor=floor)


def _train_quantile_model(X: np.ndarray, y: np.ndarray, alpha: float, seed: int,
                          init_encoder_from: nn.Mlp | None = None) -> nn.Mlp:
    cfg = default_regressor_config(X.shape[1], 2, seed=stable_hash64(seed, "cqr-init"))
    model = nn.mlp_init(cfg)
    if init_encoder_from is not None:
        for i in range(model.encoder_boundary):
            model.weights[i] = init_encoder_from.weights[i].copy()
            model.biases[i] = init_encoder_from.biases[i].copy()
    loss = nn.ColumnPinball((alpha / 2.0, 1.0 - alpha / 2.0))
    targets = np.column_stack([y, y])
    return nn.train_supervised(model, X, targets, loss, seed=stable_hash64(seed, "cqr-train"))


def fit_cqr(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
            alpha: float = 0.1, seed: int = 0) -> CalibratedConformal:
    """Conformalized quantile regression at levels alpha/2 and 1 - alpha/2."""
    _check_split(X, split)
    model = _train_quantile_model(X[split.labeled_train], y[split.labeled_train], alpha, seed)
    out = nn.mlp_forward(model, X[split.cal])
    crossing = float(np.mean(out[:, 0] > out[:, 1]))
    lo = np.minimum(out[:, 0], out[:, 1])
    hi = np.maximum(out[:, 0], out[:, 1])
    eps = cqr_calibrate(lo, hi, y[split.cal], alpha)
    return CalibratedConformal(Kind.CQR, alpha, eps, quantile_model=model,
                               crossing_rate=crossing)


def cqr_sscp_fit(X: np.ndarray, y: np.ndarray, split: SplitAssignment,
                 pretext_kind: pretext.PretextKind,
                 encoder_mode: EncoderMode = EncoderMode.INDEPENDENT,
                 alpha: float = 0.1, use_ss: bool = True,
                 pretext_on: str = "all", seed: int = 0) -> CalibratedConformal:
    """Quantile pipeline with the pretext error as an extra model input.

    The pretext model runs first (it owns its encoder here). With a shared
    encoder the pretext consumes features plus a zero placeholder in the
    error slot and the quantile model starts from the pretext encoder
    weights; with independent encoders the two nets are unrelated. With
    `use_ss` off this reduces exactly to plain CQR.
    """
    if not use_ss:
        return fit_cqr(X, y, split, alpha=alpha, seed=seed)
    _check_split(X, split)
    rows = (split.labeled_train if pretext_on == "labeled"
            else np.concatenate([split.labeled_train, split.unlabeled_train]))
    shared = encoder_mode == EncoderMode.SHARED
    ss = pretext.train_pretext_standalone(pretext_kind, X[rows], hidden=DEFAULT_HIDDEN,
                                          placeholder_slot=shared,
                                          seed=stable_hash64(seed, "cqr-pretext"))
    X_tr = X[split.labeled_train]
    aug_tr = pretext.augment_features(X_tr, ss.errors(X_tr))
    init_from = ss.head if shared else None
    model = _train_quantile_model(aug_tr, y[split.labeled_train], alpha, seed,
                                  init_encoder_from=init_from)
    aug_cal = pretext.augment_features(X[split.cal], ss.errors(X[split.cal]))
    out = nn.mlp_forward(model, aug_cal)
    crossing = float(np.mean(out[:, 0] > out[:, 1]))
    lo = np.minimum(out[:, 0], out[:, 1])
    hi = np.maximum(out[:, 0], out[:, 1])
    eps = cqr_calibrate(lo, hi, y[split.cal], alpha)
    return CalibratedConformal(Kind.CQR_SSCP, alpha, eps, quantile_model=model,
                               ss_model=ss, crossing_rate=crossing)
