"""Estimation-quality metrics: NMSE and pooled error statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class ErrorStats:
    """Pooled entry-wise error statistics across a set of estimates."""

    mean_re: float
    mean_im: float
    std_re: float
    std_im: float
    corr_re_im: float
    pearson_true_est: float


def nmse(h_true: np.ndarray, h_hat: np.ndarray) -> float:
    """Linear NMSE ||h_true - h_hat||_F^2 / ||h_true||_F^2 for one sample."""
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise ShapeError(f"shape mismatch: {h_true.shape} vs {h_hat.shape}")
    denom = float(np.sum(np.abs(h_true) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("NMSE undefined for a zero true channel")
    return float(np.sum(np.abs(h_true - h_hat) ** 2)) / denom


def nmse_linear_batch(h_true: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    """Per-sample linear NMSE over stacks shaped (n, nr, nt)."""
    if h_true.shape != h_hat.shape:
        raise ShapeError(f"shape mismatch: {h_true.shape} vs {h_hat.shape}")
    denom = np.sum(np.abs(h_true) ** 2, axis=(-2, -1))
    if np.any(denom == 0.0):
        raise UndefinedMetricError("NMSE undefined for a zero true channel")
    return np.sum(np.abs(h_true - h_hat) ** 2, axis=(-2, -1)) / denom


def db(linear: float) -> float:
    """10*log10 with an explicit -inf sentinel at zero."""
    if linear < 0.0:
        raise UndefinedMetricError(f"negative value has no dB representation: {linear}")
    if linear == 0.0:
        return float("-inf")
    return 10.0 * np.log10(linear)


def nmse_aggregate_db(nmse_values) -> float:
    """dB of the mean *linear* NMSE over samples (not the mean of dB values)."""
    values = np.asarray(list(nmse_values), dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot aggregate an empty NMSE collection")
    return db(float(np.mean(values)))


def error_stats(pairs) -> ErrorStats:
    """Statistics over entry-wise errors pooled across (h_true, h_hat) pairs.

    ``corr_re_im`` is the Pearson correlation between real and imaginary error
    parts; ``pearson_true_est`` correlates |true| against |estimate| entries.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise DataError(f"need at least 2 samples, got {len(pairs)}")
    errs = []
    mags_true = []
    mags_est = []
    for h_true, h_hat in pairs:
        h_true = np.asarray(h_true)
        h_hat = np.asarray(h_hat)
        if h_true.shape != h_hat.shape:
            raise ShapeError(f"shape mismatch: {h_true.shape} vs {h_hat.shape}")
        errs.append((h_hat - h_true).ravel())
        mags_true.append(np.abs(h_true).ravel())
        mags_est.append(np.abs(h_hat).ravel())
    err = np.concatenate(errs)
    mag_true = np.concatenate(mags_true)
    mag_est = np.concatenate(mags_est)

    re, im = err.real, err.imag
    stats = ErrorStats(
        mean_re=float(np.mean(re)),
        mean_im=float(np.mean(im)),
        std_re=float(np.std(re)),
        std_im=float(np.std(im)),
        corr_re_im=_pearson(re, im),
        pearson_true_est=_pearson(mag_true, mag_est),
    )
    return stats


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx = float(np.std(x))
    sy = float(np.std(y))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedMetricError("correlation undefined for zero-variance input")
    c = float(np.mean((x - np.mean(x)) * (y - np.mean(y))) / (sx * sy))
    return max(-1.0, min(1.0, c))
