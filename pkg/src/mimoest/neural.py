"""From-scratch multilayer perceptron that refines LS channel estimates.

The network maps ``[Re(vec(H_ls)); Im(vec(H_ls)); snr_db/30]`` to the
real/imaginary stacking of the true channel.  Everything is implemented
directly on numpy arrays: forward pass, backpropagation, Adam with decoupled
weight decay, and early stopping on a validation split.  Features and targets
are standardized per dimension with statistics frozen into the model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptionError,
    DataError,
    FormatError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .numerics import RngStream

SNR_FEATURE_SCALE = 30.0
_MODEL_MAGIC = b"MLPM"
_MODEL_VERSION = 1
_STD_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings.

    ``layer_widths`` runs input -> hidden... -> output.  Hidden layers use
    ReLU, the output layer is linear.
    """

    layer_widths: tuple
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 8
    val_fraction: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ParameterError(f"need at least 2 layers, got widths {widths}")
        if any(w < 1 for w in widths):
            raise ParameterError(f"layer widths must be >= 1, got {widths}")
        if self.lr < 0.0:
            raise ParameterError(f"learning rate must be nonnegative, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ParameterError(f"weight decay must be nonnegative, got {self.weight_decay}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ParameterError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")

    @classmethod
    def for_channel(cls, nt: int, nr: int, hidden=None, **overrides) -> "MlpConfig":
        """Widths for an nr x nt complex channel: 2*nt*nr+1 in, 2*nt*nr out.

        The default hidden stack is (256, 128, 64) scaled by max(1, m/32) so
        that channels larger than 4x4 are not rank-capped by the final hidden
        layer (m = 2*nt*nr output dimensions must fit through it).
        """
        m = 2 * nt * nr
        if hidden is None:
            f = max(1, (m + 31) // 32)
            hidden = tuple(h * f for h in (256, 128, 64))
        return cls(layer_widths=(m + 1, *hidden, m), **overrides)


@dataclass
class TrainReport:
    """Per-epoch losses plus where early stopping landed."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


@dataclass
class MlpModel:
    """Layer parameters plus the normalization statistics baked in at training."""

    config: MlpConfig
    nr: int
    nt: int
    weights: list  # weights[l]: (w_in, w_out) float64
    biases: list  # biases[l]: (w_out,) float64
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    target_mean: np.ndarray | None = None
    target_std: np.ndarray | None = None

    @property
    def is_trained(self) -> bool:
        return self.feature_mean is not None


@dataclass
class AdamState:
    """First/second-moment accumulators, one pair per parameter array."""

    m: list
    v: list
    t: int = 0


def featurize(h_ls: np.ndarray, snr_db: float) -> np.ndarray:
    """Raw (unstandardized) feature vector [Re(vec); Im(vec); snr_db/30].

    Vectorization is column-major, matching :func:`defeaturize`.
    """
    h_ls = np.asarray(h_ls)
    v = h_ls.flatten(order="F")
    return np.concatenate([v.real, v.imag, [snr_db / SNR_FEATURE_SCALE]])


def featurize_batch(h_ls: np.ndarray, snr_db: np.ndarray) -> np.ndarray:
    """Stacked raw features for (n, nr, nt) estimates and per-sample SNRs."""
    n = h_ls.shape[0]
    v = h_ls.transpose(0, 2, 1).reshape(n, -1)  # column-major vec per sample
    snr = np.asarray(snr_db, dtype=np.float64).reshape(n, 1) / SNR_FEATURE_SCALE
    return np.concatenate([v.real, v.imag, snr], axis=1)


def channel_to_targets(h: np.ndarray) -> np.ndarray:
    """Re/Im stacking of true channels (n, nr, nt) -> (n, 2*nt*nr)."""
    n = h.shape[0]
    v = h.transpose(0, 2, 1).reshape(n, -1)
    return np.concatenate([v.real, v.imag], axis=1)


def defeaturize(vec: np.ndarray, nr: int, nt: int) -> np.ndarray:
    """Inverse of the Re/Im stacking, back to an (nr, nt) complex matrix."""
    vec = np.asarray(vec, dtype=np.float64)
    m = nr * nt
    if vec.shape[-1] != 2 * m:
        raise ShapeError(f"expected vector of length {2 * m}, got {vec.shape[-1]}")
    re = vec[..., :m]
    im = vec[..., m:]
    flat = re + 1j * im
    if vec.ndim == 1:
        return flat.reshape((nr, nt), order="F")
    return flat.reshape((-1, nt, nr)).transpose(0, 2, 1)


def init_model(cfg: MlpConfig, nr: int, nt: int) -> MlpModel:
    """Fan-balanced uniform init (+-sqrt(6/(w_in+w_out))), zero biases."""
    rng = RngStream(cfg.init_seed, 0)
    weights = []
    biases = []
    for w_in, w_out in zip(cfg.layer_widths[:-1], cfg.layer_widths[1:]):
        limit = np.sqrt(6.0 / (w_in + w_out))
        weights.append(rng.uniform(-limit, limit, (w_in, w_out)))
        biases.append(np.zeros(w_out))
    return MlpModel(config=cfg, nr=nr, nt=nt, weights=weights, biases=biases)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Affine-ReLU chain with a linear last layer.  Accepts (d,) or (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != model.config.layer_widths[0]:
        raise ShapeError(
            f"input width {a.shape[1]} != model input width {model.config.layer_widths[0]}"
        )
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if l != last:
            a = np.maximum(a, 0.0)
    return a[0] if single else a


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    acts = [x]
    last = len(model.weights) - 1
    a = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if l != last:
            a = np.maximum(a, 0.0)
        acts.append(a)
    return acts


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over every element."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def backward(model: MlpModel, x: np.ndarray, target: np.ndarray):
    """Exact gradients of ``mse_loss(forward(model, x), target)``.

    Returns (grad_weights, grad_biases) shaped like the model parameters.
    The ReLU subgradient at exactly zero is taken as zero.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        target = target[None, :]
    acts = _forward_cached(model, x)
    pred = acts[-1]
    if pred.shape != target.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.shape}")

    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    # d loss / d pred for loss = mean over all elements
    delta = 2.0 * (pred - target) / pred.size
    for l in range(len(model.weights) - 1, -1, -1):
        grad_w[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0.0)
    return grad_w, grad_b


def adam_state_for(model: MlpModel) -> AdamState:
    return AdamState(
        m=[np.zeros_like(w) for w in model.weights] + [np.zeros_like(b) for b in model.biases],
        v=[np.zeros_like(w) for w in model.weights] + [np.zeros_like(b) for b in model.biases],
        t=0,
    )


def adam_step(
    model: MlpModel,
    grads,
    state: AdamState,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One Adam update with decoupled weight decay, in place.

    Decay multiplies every parameter by ``(1 - lr*weight_decay)`` alongside the
    bias-corrected moment update (AdamW-style, not L2-in-gradient).
    """
    grad_w, grad_b = grads
    params = model.weights + model.biases
    gradients = list(grad_w) + list(grad_b)
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, gradients, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + epsilon)


def _standardize_stats(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    return mean, std


def train_arrays(
    features: np.ndarray,
    targets: np.ndarray,
    cfg: MlpConfig,
    rng: RngStream,
    nr: int,
    nt: int,
):
    """Core training loop on raw feature/target arrays.

    Shuffles once, carves ``val_fraction`` off the end as the validation split,
    standardizes with statistics from the remaining training portion, then runs
    minibatch Adam with early stopping.  Returns the parameters of the best
    validation epoch.
    """
    n = features.shape[0]
    if n < 10:
        raise DataError(f"need at least 10 training samples, got {n}")
    if features.shape[1] != cfg.layer_widths[0]:
        raise ShapeError(
            f"feature width {features.shape[1]} != configured input width {cfg.layer_widths[0]}"
        )
    if targets.shape[1] != cfg.layer_widths[-1]:
        raise ShapeError(
            f"target width {targets.shape[1]} != configured output width {cfg.layer_widths[-1]}"
        )

    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    if n_val >= n:
        raise DataError(f"validation fraction {cfg.val_fraction} leaves no training data")
    train_idx = perm[: n - n_val]
    val_idx = perm[n - n_val:]

    f_mean, f_std = _standardize_stats(features[train_idx])
    t_mean, t_std = _standardize_stats(targets[train_idx])
    x_train = (features[train_idx] - f_mean) / f_std
    y_train = (targets[train_idx] - t_mean) / t_std
    x_val = (features[val_idx] - f_mean) / f_std
    y_val = (targets[val_idx] - t_mean) / t_std

    model = init_model(cfg, nr, nt)
    model.feature_mean, model.feature_std = f_mean, f_std
    model.target_mean, model.target_std = t_mean, t_std
    state = adam_state_for(model)
    report = TrainReport()

    best_val = np.inf
    best_params = None
    stall = 0
    n_train = x_train.shape[0]
    # Divergence is detected by the per-epoch finiteness check; silence the
    # transient overflow warnings it would otherwise spray.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(n_train)
            sq_sum = 0.0
            for start in range(0, n_train, cfg.batch_size):
                idx = order[start: start + cfg.batch_size]
                xb, yb = x_train[idx], y_train[idx]
                acts_out = forward(model, xb)
                sq_sum += float(np.sum((acts_out - yb) ** 2))
                grads = backward(model, xb, yb)
                adam_step(
                    model, grads, state, cfg.lr, cfg.weight_decay,
                    cfg.beta1, cfg.beta2, cfg.epsilon,
                )
            train_loss = sq_sum / (n_train * y_train.shape[1])
            val_loss = mse_loss(forward(model, x_val), y_val)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}: train={train_loss} val={val_loss}"
                )
            report.train_loss.append(train_loss)
            report.val_loss.append(val_loss)

            if val_loss < best_val:
                best_val = val_loss
                report.best_epoch = epoch
                best_params = (
                    [w.copy() for w in model.weights],
                    [b.copy() for b in model.biases],
                )
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    report.stopped_early = True
                    break

    if best_params is not None:
        model.weights, model.biases = best_params
    return model, report


def train(samples, xp: np.ndarray, cfg: MlpConfig, rng: RngStream):
    """Train on channel samples: LS-estimate features in, true channels out.

    ``samples`` is a sequence of objects with ``y``, ``snr_db`` and ``h_true``
    attributes sharing the pilot matrix ``xp``.
    """
    from .estimators import ls_estimate  # local import breaks the module cycle

    samples = list(samples)
    if len(samples) < 10:
        raise DataError(f"need at least 10 training samples, got {len(samples)}")
    nr, nt = samples[0].h_true.shape
    y_stack = np.stack([s.y for s in samples])
    h_stack = np.stack([s.h_true for s in samples])
    snr = np.array([s.snr_db for s in samples])
    h_ls = ls_estimate(y_stack, xp)
    features = featurize_batch(h_ls, snr)
    targets = channel_to_targets(h_stack)
    return train_arrays(features, targets, cfg, rng, nr, nt)


def predict(model: MlpModel, h_ls: np.ndarray, snr_db: float) -> np.ndarray:
    """Refined channel estimate from one LS estimate, shape (nr, nt)."""
    return predict_batch(model, np.asarray(h_ls)[None, :, :], np.array([snr_db]))[0]


def predict_batch(model: MlpModel, h_ls: np.ndarray, snr_db: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predict` over (n, nr, nt) LS estimates."""
    if not model.is_trained:
        raise ConfigurationError("model has no normalization statistics; train it first")
    if h_ls.shape[-2:] != (model.nr, model.nt):
        raise ShapeError(
            f"estimate shape {h_ls.shape[-2:]} != model channel shape ({model.nr}, {model.nt})"
        )
    x = featurize_batch(h_ls, snr_db)
    x = (x - model.feature_mean) / model.feature_std
    out = forward(model, x)
    out = out * model.target_std + model.target_mean
    return defeaturize(out, model.nr, model.nt)


def count_params(cfg: MlpConfig) -> int:
    """Total trainable scalars: sum of w_in*w_out + w_out over layer pairs."""
    widths = cfg.layer_widths
    return sum(wi * wo + wo for wi, wo in zip(widths[:-1], widths[1:]))


def count_flops(cfg: MlpConfig) -> int:
    """Per-inference op count: 2*w_in*w_out per layer (multiply-add = 2 ops)
    plus w_out activation/bias ops per produced layer."""
    widths = cfg.layer_widths
    return sum(2 * wi * wo + wo for wi, wo in zip(widths[:-1], widths[1:]))


# ---------------------------------------------------------------------------
# Model file format ("MLPM"): little-endian, 64-bit float parameters.
# ---------------------------------------------------------------------------


def _pack_f64(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_model(model: MlpModel, report: TrainReport, path) -> None:
    """Serialize a trained model plus its training report, byte-exactly."""
    if not model.is_trained:
        raise ConfigurationError("refusing to serialize an untrained model")
    cfg = model.config
    chunks = [
        _MODEL_MAGIC,
        struct.pack("<I", _MODEL_VERSION),
        struct.pack("<II", model.nr, model.nt),
        struct.pack("<I", len(cfg.layer_widths)),
        struct.pack(f"<{len(cfg.layer_widths)}I", *cfg.layer_widths),
        struct.pack(
            "<ddddd", cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.epsilon
        ),
        struct.pack("<III", cfg.max_epochs, cfg.patience, cfg.batch_size),
        struct.pack("<d", cfg.val_fraction),
        struct.pack("<Q", cfg.init_seed & 0xFFFFFFFFFFFFFFFF),
    ]
    for w, b in zip(model.weights, model.biases):
        chunks.append(_pack_f64(w))
        chunks.append(_pack_f64(b))
    for arr in (model.feature_mean, model.feature_std, model.target_mean, model.target_std):
        chunks.append(_pack_f64(arr))
    chunks.append(struct.pack("<I", len(report.train_loss)))
    chunks.append(_pack_f64(np.asarray(report.train_loss)))
    chunks.append(_pack_f64(np.asarray(report.val_loss)))
    chunks.append(struct.pack("<IB", report.best_epoch, int(report.stopped_early)))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError("model file truncated")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def load_model(path):
    """Read back a model file written by :func:`save_model`.

    Returns ``(model, report)``.  Raises :class:`FormatError` on a bad magic
    or version, :class:`CorruptionError` on truncation.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != _MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    (version,) = r.unpack("<I")
    if version != _MODEL_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    nr, nt = r.unpack("<II")
    (n_widths,) = r.unpack("<I")
    if n_widths < 2 or n_widths > 64:
        raise CorruptionError(f"implausible layer count {n_widths}")
    widths = r.unpack(f"<{n_widths}I")
    lr, weight_decay, beta1, beta2, epsilon = r.unpack("<ddddd")
    max_epochs, patience, batch_size = r.unpack("<III")
    (val_fraction,) = r.unpack("<d")
    (init_seed,) = r.unpack("<Q")
    cfg = MlpConfig(
        layer_widths=widths,
        lr=lr,
        weight_decay=weight_decay,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        max_epochs=max_epochs,
        patience=patience,
        batch_size=batch_size,
        val_fraction=val_fraction,
        init_seed=init_seed,
    )
    weights = []
    biases = []
    for wi, wo in zip(widths[:-1], widths[1:]):
        weights.append(r.f64(wi * wo).reshape(wi, wo))
        biases.append(r.f64(wo))
    feature_mean = r.f64(widths[0])
    feature_std = r.f64(widths[0])
    target_mean = r.f64(widths[-1])
    target_std = r.f64(widths[-1])
    (n_epochs,) = r.unpack("<I")
    train_loss = list(r.f64(n_epochs))
    val_loss = list(r.f64(n_epochs))
    best_epoch, stopped = r.unpack("<IB")
    if r.pos != len(r.buf):
        raise CorruptionError(f"{len(r.buf) - r.pos} unexpected trailing bytes")
    model = MlpModel(
        config=cfg,
        nr=nr,
        nt=nt,
        weights=weights,
        biases=biases,
        feature_mean=feature_mean,
        feature_std=feature_std,
        target_mean=target_mean,
        target_std=target_std,
    )
    report = TrainReport(
        train_loss=train_loss,
        val_loss=val_loss,
        best_epoch=best_epoch,
        stopped_early=bool(stopped),
    )
    return model, report
