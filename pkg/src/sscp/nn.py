"""Dense feed-forward network engine.

Small, fully deterministic MLP stack used for the predictive model, the
residual normalizer, the pretext heads and the quantile model. Everything
runs in float64 so trained weights are bit-reproducible given a seed.
Hidden layers use ReLU, the output layer is linear, and dropout (inverted
scaling) is applied after each hidden activation in train mode only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyInputError, InsufficientDataError, ShapeError, TrainingDivergedError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
VALIDATION_FRACTION = 0.1


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

class Mse:
    """Mean squared error."""

    def per_sample(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        return np.mean((pred - target) ** 2, axis=1)

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        return 2.0 * (pred - target) / pred.size

    def __repr__(self) -> str:
        return "Mse()"


class Pinball:
    """Pinball (quantile) loss at level tau.

    Per sample: max(tau * d, (tau - 1) * d) with d = target - pred. The
    subgradient at d == 0 takes the tau-side value.
    """

    def __init__(self, tau: float):
        if not 0.0 < tau < 1.0:
            raise ConfigurationError(f"pinball tau must be in (0,1), got {tau}")
        self.tau = tau

    def per_sample(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        d = target - pred
        return np.mean(np.maximum(self.tau * d, (self.tau - 1.0) * d), axis=1)

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        d = target - pred
        # dL/dpred: -tau where d >= 0 (tau-side at the kink), 1 - tau where d < 0
        g = np.where(d >= 0.0, -self.tau, 1.0 - self.tau)
        return g / pred.size

    def __repr__(self) -> str:
        return f"Pinball(tau={self.tau})"


class MaskBce:
    """Binary cross-entropy on logits, for mask-vector recovery."""

    def per_sample(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        # stable: max(z,0) - z*t + log(1 + exp(-|z|))
        z = pred
        bce = np.maximum(z, 0.0) - z * target + np.log1p(np.exp(-np.abs(z)))
        return np.mean(bce, axis=1)

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        p = _sigmoid(pred)
        return (p - target) / pred.size

    def __repr__(self) -> str:
        return "MaskBce()"


class ColumnPinball:
    """Independent pinball losses per output column (two-quantile heads).

    Targets carry the same width as predictions; column j is scored at
    level taus[j].
    """

    def __init__(self, taus: tuple[float, ...]):
        self.parts = tuple(Pinball(t) for t in taus)

    def per_sample(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        total = np.zeros(pred.shape[0])
        for j, part in enumerate(self.parts):
            total += part.per_sample(pred[:, j:j + 1], target[:, j:j + 1])
        return total

    def grad(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        g = np.empty_like(pred)
        n = pred.shape[0]
        for j, part in enumerate(self.parts):
            d = target[:, j] - pred[:, j]
            g[:, j] = np.where(d >= 0.0, -part.tau, 1.0 - part.tau) / n
        return g


MSE = Mse()
MASK_BCE = MaskBce()

LossKind = Mse | Pinball | MaskBce


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_eval(kind, pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-sample loss of `kind` over aligned prediction/target vectors."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0 or target.size == 0:
        raise EmptyInputError("loss_eval requires non-empty inputs")
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    pred2 = pred.reshape(pred.shape[0], -1)
    target2 = target.reshape(target.shape[0], -1)
    return float(np.mean(kind.per_sample(pred2, target2)))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings for one network."""

    layer_sizes: tuple[int, ...]
    dropout_rate: float = 0.1
    learning_rate: float = 5e-4
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigurationError("layer_sizes needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigurationError(f"layer sizes must be positive, got {self.layer_sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.learning_rate <= 0.0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ConfigurationError("patience must be in [1, max_epochs]")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


class Mlp:
    """Weights + biases for a dense network, split into encoder and head.

    `encoder_boundary` counts weight layers: layers [0, encoder_boundary)
    form the encoder, the rest the head. The default keeps only the output
    layer in the head.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray],
                 config: MlpConfig, encoder_boundary: int | None = None):
        self.weights = weights
        self.biases = biases
        self.config = config
        n_layers = len(weights)
        if encoder_boundary is None:
            encoder_boundary = n_layers - 1 if n_layers > 1 else 1
        if not 1 <= encoder_boundary <= max(n_layers - 1, 1):
            raise ConfigurationError(
                f"encoder_boundary {encoder_boundary} outside [1, {n_layers - 1}]")
        self.encoder_boundary = encoder_boundary
        self.history: TrainHistory | None = None
        for i in range(n_layers - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ShapeError(f"layer {i} output {weights[i].shape[1]} != layer {i+1} input")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "Mlp":
        m = Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                self.config, self.encoder_boundary)
        return m

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def mlp_init(config: MlpConfig, seed: int | None = None, encoder_boundary: int | None = None) -> Mlp:
    """Fresh network: uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights, biases = [], []
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, config, encoder_boundary)


class FrozenEncoder:
    """Read-only view of the encoder layers of a trained network."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [w.copy() for w in weights]
        self.biases = [b.copy() for b in biases]
        for arr in self.weights + self.biases:
            arr.setflags(write=False)

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Encoder representation (ReLU after every encoder layer)."""
        a = np.asarray(X, dtype=np.float64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != self.input_size:
            raise ShapeError(f"input has {a.shape[1]} columns, encoder expects {self.input_size}")
        for w, b in zip(self.weights, self.biases):
            a = np.maximum(a @ w + b, 0.0)
        return a


def extract_encoder(model: Mlp) -> FrozenEncoder:
    """Freeze the encoder part of a trained network."""
    k = model.encoder_boundary
    return FrozenEncoder(model.weights[:k], model.biases[:k])


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def mlp_forward(model: Mlp, batch: np.ndarray, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
    out, _ = _forward_cached(model, batch, train_mode, rng)
    return out


def _forward_cached(model: Mlp, batch: np.ndarray, train_mode: bool,
                    rng: np.random.Generator | None):
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.input_size:
        raise ShapeError(f"batch has {X.shape[1]} columns, model expects {model.input_size}")
    p = model.config.dropout_rate
    drop = train_mode and p > 0.0
    if drop and rng is None:
        raise ConfigurationError("train-mode forward with dropout needs an rng")
    a = X
    acts = [X]        # layer inputs
    zs = []           # pre-activations of hidden layers
    masks = []        # dropout masks (scaled), aligned with hidden layers
    n = model.n_layers
    for i in range(n - 1):
        z = a @ model.weights[i] + model.biases[i]
        h = np.maximum(z, 0.0)
        if drop:
            mask = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * mask
        else:
            mask = None
        zs.append(z)
        masks.append(mask)
        acts.append(h)
        a = h
    out = a @ model.weights[-1] + model.biases[-1]
    return out, (acts, zs, masks)


def _backward(model: Mlp, cache, out_grad: np.ndarray):
    """Parameter gradients from dL/d(output); mirrors _forward_cached."""
    acts, zs, masks = cache
    n = model.n_layers
    grads_w = [None] * n
    grads_b = [None] * n
    delta = out_grad
    for i in range(n - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            da = delta @ model.weights[i].T
            if masks[i - 1] is not None:
                da = da * masks[i - 1]
            delta = da * (zs[i - 1] > 0.0)
    return grads_w, grads_b


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _as_2d(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def train_supervised(model: Mlp, inputs: np.ndarray, targets: np.ndarray,
                     loss: LossKind = MSE, freeze_encoder: bool = False,
                     seed: int | None = None) -> Mlp:
    """Train a copy of `model` with Adam + early stopping; returns the copy.

    A seeded 10% slice of the provided data is held out for validation;
    the returned model carries the weights of its best validation epoch.
    With `freeze_encoder`, layers below the encoder boundary are excluded
    from updates. Raises TrainingDivergedError on a non-finite loss.
    """
    X = _as_2d(inputs)
    Y = _as_2d(targets)
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"{X.shape[0]} inputs vs {Y.shape[0]} targets")
    if Y.shape[1] != model.output_size:
        raise ShapeError(f"targets have {Y.shape[1]} columns, model outputs {model.output_size}")
    if X.shape[0] < 2:
        raise InsufficientDataError("training needs at least 2 samples")

    cfg = model.config
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n = X.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(n * VALIDATION_FRACTION))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    X_tr, Y_tr = X[tr_idx], Y[tr_idx]
    X_val, Y_val = X[val_idx], Y[val_idx]

    m = model.copy()
    first = 0 if not freeze_encoder else m.encoder_boundary
    adam_m = [np.zeros_like(p) for p in m.parameters()]
    adam_v = [np.zeros_like(p) for p in m.parameters()]
    t = 0
    lr = cfg.learning_rate

    best_val = np.inf
    best_weights = None
    bad = 0
    hist = TrainHistory()

    n_tr = X_tr.shape[0]
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        batch_losses, batch_sizes = [], []
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X_tr[idx], Y_tr[idx]
            out, cache = _forward_cached(m, xb, train_mode=True, rng=rng)
            batch_loss = float(np.mean(loss.per_sample(out, yb)))
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(epoch)
            gw, gb = _backward(m, cache, loss.grad(out, yb))
            t += 1
            c1 = 1.0 - ADAM_BETA1 ** t
            c2 = 1.0 - ADAM_BETA2 ** t
            for li in range(first, m.n_layers):
                for p, g, slot in ((m.weights[li], gw[li], 2 * li),
                                   (m.biases[li], gb[li], 2 * li + 1)):
                    adam_m[slot] = ADAM_BETA1 * adam_m[slot] + (1 - ADAM_BETA1) * g
                    adam_v[slot] = ADAM_BETA2 * adam_v[slot] + (1 - ADAM_BETA2) * g * g
                    p -= lr * (adam_m[slot] / c1) / (np.sqrt(adam_v[slot] / c2) + ADAM_EPS)
            batch_losses.append(batch_loss)
            batch_sizes.append(len(idx))
        epoch_loss = float(np.average(batch_losses, weights=batch_sizes))
        val_out = mlp_forward(m, X_val)
        val_loss = float(np.mean(loss.per_sample(val_out, Y_val)))
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch)
        hist.train_loss.append(epoch_loss)
        hist.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_weights = ([w.copy() for w in m.weights], [b.copy() for b in m.biases])
            hist.best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                hist.stopped_epoch = epoch
                break
    else:
        hist.stopped_epoch = cfg.max_epochs - 1

    if best_weights is not None:
        m.weights, m.biases = best_weights
    m.history = hist
    return m


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(model: Mlp, sample: tuple[np.ndarray, np.ndarray], loss: LossKind,
               step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in eval mode (no dropout). Relative error per parameter is
    |analytic - numeric| / max(1, |numeric|).
    """
    X = _as_2d(sample[0])
    Y = _as_2d(sample[1])

    def total_loss() -> float:
        out = mlp_forward(model, X)
        return float(np.mean(loss.per_sample(out, Y)))

    out, cache = _forward_cached(model, X, train_mode=False, rng=None)
    gw, gb = _backward(model, cache, loss.grad(out, Y))
    analytic = gw + gb

    worst = 0.0
    for arr, grad in zip(list(model.weights) + list(model.biases), analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = total_loss()
            flat[j] = orig - step
            lo = total_loss()
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * step)
            rel = abs(gflat[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst
