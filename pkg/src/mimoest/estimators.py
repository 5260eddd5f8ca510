"""Channel estimators: least squares, LMMSE, and the neural refiner.

Two layers live here.  The functional core (:func:`ls_estimate`,
:func:`lmmse_estimate`, :func:`estimate`) operates on raw arrays and is what
the math contracts and tests target.  On top sits a small scikit-learn-style
facade -- estimator classes with ``fit``/``predict`` and ``get_params`` -- so
sweeps and user code can treat all three estimators uniformly.

The LMMSE filter uses a transmit-side prior only: for row-wise white noise the
per-row Wiener filter is unchanged by receive-side correlation, which is
accepted on :class:`LmmsePrior` for interface completeness.  The noise
variance handed to LMMSE is the true simulation value (genie knowledge).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from .channel import exponential_correlation, noise_variance
from .errors import (
    ConfigurationError,
    IdentifiabilityError,
    ParameterError,
    ShapeError,
    SingularMatrixError,
)
from .numerics import DOMAIN_TRAIN, RngStream, cholesky, inverse


class EstimatorKind(str, Enum):
    LS = "ls"
    LMMSE = "lmmse"
    DNN = "dnn"


@dataclass(frozen=True)
class LmmsePrior:
    """Second-order channel statistics plus noise power for LMMSE."""

    r_rx: np.ndarray
    r_tx: np.ndarray
    noise_var: float

    def __post_init__(self):
        if self.noise_var <= 0.0:
            raise ParameterError(f"noise variance must be positive, got {self.noise_var}")
        for name, r in (("r_rx", self.r_rx), ("r_tx", self.r_tx)):
            r = np.asarray(r)
            if r.ndim != 2 or r.shape[0] != r.shape[1]:
                raise ParameterError(f"{name} must be square, got shape {r.shape}")
            if not np.allclose(np.diag(r), 1.0, atol=1e-9):
                raise ParameterError(f"{name} must have unit diagonal")
            try:
                cholesky(r.astype(np.complex128))
            except Exception as exc:
                raise ParameterError(f"{name} is not Hermitian positive definite") from exc


def ls_projector(xp: np.ndarray) -> np.ndarray:
    """Right-multiplier A = Xp^H (Xp Xp^H)^-1 so that H_ls = Y @ A."""
    xp = np.asarray(xp, dtype=np.complex128)
    gram = xp @ xp.conj().T
    try:
        gram_inv = inverse(gram)
    except SingularMatrixError as exc:
        raise IdentifiabilityError(f"pilot Gram matrix is singular: {exc}") from exc
    return xp.conj().T @ gram_inv


def ls_estimate(y: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """Least-squares estimate H_ls = Y Xp^H (Xp Xp^H)^-1.

    ``y`` may be one observation (nr, P) or a stack (n, nr, P).
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != xp.shape[1]:
        raise ShapeError(f"observation has {y.shape[-1]} symbols, pilots have {xp.shape[1]}")
    return y @ ls_projector(xp)


def lmmse_filter(xp: np.ndarray, r_tx: np.ndarray, noise_var: float) -> np.ndarray:
    """Right-multiplier F with H_hat = Y @ F for the transmit-side Wiener filter.

    Computed in the nt-sized form Xp^H R_t (Xp Xp^H R_t + sigma^2 I)^-1, which
    is algebraically identical to inverting the P x P regularized Gram.
    """
    xp = np.asarray(xp, dtype=np.complex128)
    r_tx = np.asarray(r_tx, dtype=np.complex128)
    nt = xp.shape[0]
    if r_tx.shape != (nt, nt):
        raise ShapeError(f"r_tx shape {r_tx.shape} does not match nt={nt}")
    core = xp @ xp.conj().T @ r_tx + noise_var * np.eye(nt, dtype=np.complex128)
    return xp.conj().T @ r_tx @ inverse(core)


def lmmse_estimate(y: np.ndarray, xp: np.ndarray, prior: LmmsePrior) -> np.ndarray:
    """LMMSE estimate under the given prior; accepts (nr, P) or (n, nr, P)."""
    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != xp.shape[1]:
        raise ShapeError(f"observation has {y.shape[-1]} symbols, pilots have {xp.shape[1]}")
    return y @ lmmse_filter(xp, prior.r_tx, prior.noise_var)


@dataclass
class EstimatorContext:
    """Everything the uniform dispatch needs beyond the sample itself."""

    xp: np.ndarray
    pilot_energy: float = 1.0
    r_tx: np.ndarray | None = None
    r_rx: np.ndarray | None = None
    model: object | None = None


def estimate(kind: EstimatorKind, sample, context: EstimatorContext) -> np.ndarray:
    """Route one sample through the requested estimator."""
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.LS:
        return ls_estimate(sample.y, context.xp)
    if kind is EstimatorKind.LMMSE:
        nt = context.xp.shape[0]
        nr = sample.y.shape[0]
        prior = LmmsePrior(
            r_rx=np.eye(nr, dtype=np.complex128) if context.r_rx is None else context.r_rx,
            r_tx=np.eye(nt, dtype=np.complex128) if context.r_tx is None else context.r_tx,
            noise_var=noise_variance(sample.snr_db, context.pilot_energy),
        )
        return lmmse_estimate(sample.y, context.xp, prior)
    if kind is EstimatorKind.DNN:
        from . import neural  # local import breaks the module cycle

        if context.model is None:
            raise ConfigurationError("DNN estimation requires a trained model in the context")
        h_ls = ls_estimate(sample.y, context.xp)
        return neural.predict(context.model, h_ls, sample.snr_db)
    raise ParameterError(f"unknown estimator kind {kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# scikit-learn style facade
# ---------------------------------------------------------------------------


def _stack_observations(samples):
    samples = list(samples)
    if not samples:
        raise ParameterError("empty sample collection")
    y = np.stack([np.asarray(s.y) for s in samples])
    snr = np.array([s.snr_db for s in samples], dtype=np.float64)
    return y, snr


class ChannelEstimatorBase(BaseEstimator):
    """Common fit/predict surface for channel estimators.

    ``fit(samples, xp)`` binds the estimator to a pilot matrix (and trains it,
    for the learned variant); ``predict(samples)`` maps received pilot blocks
    to channel estimates of shape ``(n, nr, nt)``.
    """

    name = "base"

    def fit(self, samples, xp: np.ndarray):  # pragma: no cover - overridden
        raise NotImplementedError

    def predict(self, samples) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError

    def _check_fitted(self):
        if not hasattr(self, "xp_"):
            raise ConfigurationError(f"{type(self).__name__} has not been fitted")


class LeastSquaresEstimator(ChannelEstimatorBase):
    """Prior-free LS inversion of the pilot block."""

    name = "ls"

    def fit(self, samples, xp: np.ndarray):
        self.xp_ = np.asarray(xp, dtype=np.complex128)
        self.projector_ = ls_projector(self.xp_)
        return self

    def predict(self, samples) -> np.ndarray:
        self._check_fitted()
        y, _ = _stack_observations(samples)
        return y @ self.projector_


class LmmseEstimator(ChannelEstimatorBase):
    """Wiener filtering with a transmit-side prior and genie noise knowledge.

    ``spatial_rho=None`` gives the mismatched identity prior used as the
    default "MMSE" baseline; passing the generator's correlation coefficient
    gives the matched prior.
    """

    name = "lmmse"

    def __init__(self, spatial_rho: float | None = None, pilot_energy: float = 1.0):
        self.spatial_rho = spatial_rho
        self.pilot_energy = pilot_energy

    def fit(self, samples, xp: np.ndarray):
        self.xp_ = np.asarray(xp, dtype=np.complex128)
        nt = self.xp_.shape[0]
        if self.spatial_rho is None:
            self.r_tx_ = np.eye(nt, dtype=np.complex128)
        else:
            self.r_tx_ = exponential_correlation(nt, self.spatial_rho)
        return self

    def predict(self, samples) -> np.ndarray:
        self._check_fitted()
        y, snr = _stack_observations(samples)
        out = np.empty((y.shape[0], y.shape[1], self.xp_.shape[0]), dtype=np.complex128)
        # One filter per distinct SNR; sweeps evaluate at a fixed SNR so this
        # collapses to a single matrix product.
        for snr_value in np.unique(snr):
            mask = snr == snr_value
            filt = lmmse_filter(
                self.xp_, self.r_tx_, noise_variance(float(snr_value), self.pilot_energy)
            )
            out[mask] = y[mask] @ filt
        return out


class DnnEstimator(ChannelEstimatorBase):
    """LS-feature MLP refiner trained from scratch on labelled samples."""

    name = "dnn"

    def __init__(
        self,
        hidden=None,
        lr: float = 1e-4,
        weight_decay: float = 1e-5,
        max_epochs: int = 50,
        patience: int = 5,
        batch_size: int = 8,
        val_fraction: float = 0.1,
        init_seed: int = 0,
        train_seed: int = 0,
        train_stream: int = DOMAIN_TRAIN,
    ):
        self.hidden = hidden
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.init_seed = init_seed
        self.train_seed = train_seed
        self.train_stream = train_stream

    def fit(self, samples, xp: np.ndarray):
        from . import neural

        samples = list(samples)
        if not samples:
            raise ParameterError("empty sample collection")
        nr, nt = np.asarray(samples[0].h_true).shape
        cfg = neural.MlpConfig.for_channel(
            nt,
            nr,
            hidden=None if self.hidden is None else tuple(self.hidden),
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
            init_seed=self.init_seed,
        )
        self.xp_ = np.asarray(xp, dtype=np.complex128)
        rng = RngStream(self.train_seed, self.train_stream)
        self.model_, self.report_ = neural.train(samples, self.xp_, cfg, rng)
        return self

    def with_model(self, model, xp: np.ndarray):
        """Bind an already-trained model instead of fitting."""
        self.xp_ = np.asarray(xp, dtype=np.complex128)
        self.model_ = model
        self.report_ = None
        return self

    def predict(self, samples) -> np.ndarray:
        from . import neural

        self._check_fitted()
        if getattr(self, "model_", None) is None:
            raise ConfigurationError("DnnEstimator has no trained model")
        y, snr = _stack_observations(samples)
        h_ls = y @ ls_projector(self.xp_)
        return neural.predict_batch(self.model_, h_ls, snr)
