"""Self-supervised pretext tasks and per-sample difficulty errors.

Two tasks are supported: autoencoder reconstruction and VIME-style
mask/feature recovery. In the residual-fitting pipeline the task runs on
top of a frozen encoder taken from the predictive model; for the quantile
pipeline the task owns its encoder and operates on raw features.

The per-sample pretext error is computable without labels, so it can be
evaluated at calibration and test time and appended to the normalizer's
input features. VIME errors need a corruption draw; that draw is made
deterministic per sample by hashing the sample's feature bytes together
with the model's corruption seed, and swap values come from a retained
donor pool of training rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, EncoderNotFrozenError, InsufficientDataError, ShapeError
from .nn import FrozenEncoder, Mlp, MlpConfig
from .seeding import stable_hash64

DONOR_POOL_SIZE = 256
PRETEXT_MAX_EPOCHS = 500
PRETEXT_BATCH_SIZE = 128
PRETEXT_PATIENCE = 20


@dataclass(frozen=True)
class Autoencoder:
    """Reconstruct the task input through a mirrored decoder head."""


@dataclass(frozen=True)
class Vime:
    """Recover a Bernoulli corruption mask and the clean values.

    `feature_loss_weight` multiplies the feature-reconstruction term in
    total = mask_bce + feature_loss_weight * feature_mse.
    """

    p_corrupt: float = 0.3
    feature_loss_weight: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.p_corrupt < 1.0:
            raise ConfigurationError(f"p_corrupt must be in [0,1), got {self.p_corrupt}")
        if self.feature_loss_weight <= 0:
            raise ConfigurationError("feature_loss_weight must be positive")


PretextKind = Autoencoder | Vime


class VimeLoss:
    """Joint loss on packed outputs [mask logits | reconstruction].

    Targets pack [mask | clean values] the same way.
    """

    def __init__(self, feature_loss_weight: float):
        self.w = feature_loss_weight

    def _split(self, arr: np.ndarray):
        d = arr.shape[1] // 2
        return arr[:, :d], arr[:, d:]

    def per_sample(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        logits, recon = self._split(pred)
        mask, clean = self._split(target)
        bce = nn.MASK_BCE.per_sample(logits, mask)
        mse = nn.MSE.per_sample(recon, clean)
        return bce + self.w * mse

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        logits, recon = self._split(pred)
        mask, clean = self._split(target)
        scale = logits.size  # n * d, matching the per-dim means above
        g_mask = (nn._sigmoid(logits) - mask) / scale
        g_feat = self.w * 2.0 * (recon - clean) / scale
        return np.hstack([g_mask, g_feat])


def vime_corrupt(reps: np.ndarray, p_corrupt: float, rng: np.random.Generator):
    """Corrupt a matrix by swapping masked entries with other rows' values.

    Returns (corrupted, mask) where mask entries are i.i.d.
    Bernoulli(p_corrupt) and each masked entry takes the same column's value
    from a uniformly chosen other row.
    """
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2:
        raise ShapeError("vime_corrupt expects a 2-D matrix")
    n, d = reps.shape
    if n < 2:
        raise InsufficientDataError("corruption swaps values across rows; need >= 2 rows")
    mask = (rng.random((n, d)) < p_corrupt).astype(np.float64)
    donors = rng.integers(0, n - 1, size=(n, d))
    rows = np.arange(n)[:, None]
    donors = donors + (donors >= rows)  # skip own row
    cols = np.arange(d)[None, :]
    corrupted = np.where(mask > 0, reps[donors, cols], reps)
    return corrupted, mask


class SsModel:
    """A trained pretext model; frozen, safe for concurrent evaluation."""

    def __init__(self, kind: PretextKind, head: Mlp,
                 encoder: FrozenEncoder | None = None,
                 reconstruct_raw: bool = False,
                 placeholder_slot: bool = False,
                 donor_pool: np.ndarray | None = None,
                 corruption_seed: int = 0):
        self.kind = kind
        self.head = head
        self.encoder = encoder
        self.reconstruct_raw = reconstruct_raw
        self.placeholder_slot = placeholder_slot
        self.donor_pool = donor_pool
        self.corruption_seed = corruption_seed
        for arr in head.weights + head.biases:
            arr.setflags(write=False)

    def task_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if self.encoder is not None:
            return self.encoder.transform(X)
        if self.placeholder_slot:
            return np.hstack([X, np.zeros((X.shape[0], 1))])
        return X

    def errors(self, X: np.ndarray) -> np.ndarray:
        """Per-sample pretext error; deterministic for identical inputs."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        reps = self.task_input(X)
        if isinstance(self.kind, Autoencoder):
            target = X if self.reconstruct_raw else reps
            recon = nn.mlp_forward(self.head, reps)
            errs = np.mean((recon - target) ** 2, axis=1)
        else:
            corrupted, mask = self._per_sample_corrupt(X, reps)
            out = nn.mlp_forward(self.head, corrupted)
            d = reps.shape[1]
            logits, recon = out[:, :d], out[:, d:]
            bce = nn.MASK_BCE.per_sample(logits, mask)
            mse = nn.MSE.per_sample(recon, reps)
            errs = bce + self.kind.feature_loss_weight * mse
        return errs[0] if single else errs

    def _per_sample_corrupt(self, X_raw: np.ndarray, reps: np.ndarray):
        pool = self.donor_pool
        n, d = reps.shape
        mask = np.empty((n, d))
        corrupted = reps.copy()
        cols = np.arange(d)
        for i in range(n):
            sample_seed = stable_hash64(self.corruption_seed,
                                        np.ascontiguousarray(X_raw[i]).tobytes())
            rng = np.random.default_rng(sample_seed)
            m = rng.random(d) < self.kind.p_corrupt
            donors = rng.integers(0, pool.shape[0], size=d)
            corrupted[i, m] = pool[donors[m], cols[m]]
            mask[i] = m
        return corrupted, mask


def _head_config(layer_sizes: tuple[int, ...], seed: int) -> MlpConfig:
    return MlpConfig(layer_sizes=layer_sizes, dropout_rate=0.0,
                     learning_rate=5e-4, batch_size=PRETEXT_BATCH_SIZE,
                     max_epochs=PRETEXT_MAX_EPOCHS, patience=PRETEXT_PATIENCE,
                     seed=seed)


def _encoder_widths(encoder: FrozenEncoder) -> tuple[int, ...]:
    sizes = [encoder.weights[0].shape[0]]
    for w in encoder.weights:
        sizes.append(w.shape[1])
    return tuple(sizes)


def train_pretext(encoder: FrozenEncoder, kind: PretextKind, data: np.ndarray,
                  seed: int = 0) -> SsModel:
    """Fit a pretext head on top of a frozen encoder.

    `data` holds raw feature rows (labeled training rows, plus any unlabeled
    rows the caller wants the task to see). The head never updates the
    encoder.
    """
    if not isinstance(encoder, FrozenEncoder):
        raise EncoderNotFrozenError("train_pretext requires a FrozenEncoder; "
                                    "use nn.extract_encoder on the trained model")
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("pretext data must be a 2-D matrix")
    reps = encoder.transform(X)
    d_enc = reps.shape[1]
    rng = np.random.default_rng(stable_hash64(seed, "pretext"))

    if isinstance(kind, Autoencoder):
        widths = _encoder_widths(encoder)
        head_sizes = tuple(reversed(widths))  # mirror back to raw-feature space
        head = nn.mlp_init(_head_config(head_sizes, seed), seed=stable_hash64(seed, "head-init"))
        trained = nn.train_supervised(head, reps, X, nn.MSE, seed=stable_hash64(seed, "head-train"))
        model = SsModel(kind, trained, encoder=encoder, reconstruct_raw=True)
    else:
        corrupted, mask = vime_corrupt(reps, kind.p_corrupt, rng)
        targets = np.hstack([mask, reps])
        head_sizes = (d_enc, d_enc, 2 * d_enc)  # dense trunk + two parallel estimators
        head = nn.mlp_init(_head_config(head_sizes, seed), seed=stable_hash64(seed, "head-init"))
        trained = nn.train_supervised(head, corrupted, targets,
                                      VimeLoss(kind.feature_loss_weight),
                                      seed=stable_hash64(seed, "head-train"))
        pool_idx = rng.choice(reps.shape[0], size=min(DONOR_POOL_SIZE, reps.shape[0]), replace=False)
        model = SsModel(kind, trained, encoder=encoder,
                        donor_pool=reps[pool_idx].copy(),
                        corruption_seed=stable_hash64(seed, "corruption"))
    return model


def train_pretext_standalone(kind: PretextKind, data: np.ndarray,
                             hidden: tuple[int, ...] = (64, 64),
                             bottleneck_sizes: tuple[int, ...] | None = None,
                             placeholder_slot: bool = False,
                             seed: int = 0) -> SsModel:
    """Fit a pretext model that owns its encoder, operating on raw features.

    Used by the quantile pipeline (no pre-trained encoder exists when the
    pretext runs) and by the synthetic demonstration. For the autoencoder,
    `bottleneck_sizes` overrides the full net layout, e.g. (20, 64, 1, 64, 20).
    With `placeholder_slot` a constant-zero column is appended to the input,
    reserving the slot the downstream model will feed errors into.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("pretext data must be a 2-D matrix")
    if placeholder_slot:
        X = np.hstack([X, np.zeros((X.shape[0], 1))])
    d = X.shape[1]
    rng = np.random.default_rng(stable_hash64(seed, "pretext"))

    if isinstance(kind, Autoencoder):
        sizes = bottleneck_sizes if bottleneck_sizes is not None else (d, *hidden, *reversed(hidden), d)
        if sizes[0] != d or sizes[-1] != d:
            raise ConfigurationError(f"autoencoder net must map {d} -> {d}, got {sizes}")
        net = nn.mlp_init(_head_config(tuple(sizes), seed), seed=stable_hash64(seed, "head-init"),
                          encoder_boundary=(len(sizes) - 1) // 2)
        trained = nn.train_supervised(net, X, X, nn.MSE, seed=stable_hash64(seed, "head-train"))
        model = SsModel(kind, trained, encoder=None, placeholder_slot=placeholder_slot)
    else:
        corrupted, mask = vime_corrupt(X, kind.p_corrupt, rng)
        targets = np.hstack([mask, X])
        sizes = (d, *hidden, 2 * d)
        net = nn.mlp_init(_head_config(sizes, seed), seed=stable_hash64(seed, "head-init"),
                          encoder_boundary=len(hidden))
        trained = nn.train_supervised(net, corrupted, targets,
                                      VimeLoss(kind.feature_loss_weight),
                                      seed=stable_hash64(seed, "head-train"))
        pool_idx = rng.choice(X.shape[0], size=min(DONOR_POOL_SIZE, X.shape[0]), replace=False)
        model = SsModel(kind, trained, encoder=None, placeholder_slot=placeholder_slot,
                        donor_pool=X[pool_idx].copy(),
                        corruption_seed=stable_hash64(seed, "corruption"))
    return model


def ss_error(model: SsModel, x: np.ndarray):
    """Pretext error of one sample (or per-row errors of a matrix)."""
    return model.errors(x)


def augment_features(x: np.ndarray, err) -> np.ndarray:
    """Append the pretext error as one extra feature column."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.concatenate([x, [float(err)]])
    errs = np.asarray(err, dtype=np.float64).reshape(-1)
    if errs.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows vs {errs.shape[0]} errors")
    return np.hstack([x, errs[:, None]])
