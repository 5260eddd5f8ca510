"""QPSK data transmission with zero-forcing detection under estimated CSI.

Bits map Gray-coded onto unit-energy QPSK symbols, antennas first and then
time.  Detection is the channel pseudo-inverse applied to the received block,
followed by per-quadrature sign decisions (a component equal to zero decodes
as bit 0).  Data-phase noise follows the same SNR convention as pilots with
unit symbol energy: ``sigma^2 = 10**(-snr_db / 10)``.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, SingularMatrixError
from .numerics import RngStream, inverse, sample_complex_gaussian_batch

_SQRT2 = np.sqrt(2.0)


def qpsk_modulate(bits: np.ndarray, nt: int) -> np.ndarray:
    """Map a bit block to an (nt, n_symbols) QPSK symbol matrix.

    Pair (b0, b1) becomes ((1-2*b0) + 1j*(1-2*b1)) / sqrt(2); consecutive
    pairs fill antennas within a time slot before advancing in time.
    """
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size == 0 or bits.size % (2 * nt) != 0:
        raise ShapeError(
            f"bit count {bits.size} must be a positive multiple of 2*nt={2 * nt}"
        )
    if not np.all((bits == 0) | (bits == 1)):
        raise ShapeError("bits must be 0 or 1")
    pairs = bits.reshape(-1, nt, 2).astype(np.float64)  # (time, antenna, bit)
    sym = ((1.0 - 2.0 * pairs[..., 0]) + 1j * (1.0 - 2.0 * pairs[..., 1])) / _SQRT2
    return sym.T  # (nt, time)


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    """Sign decisions inverting :func:`qpsk_modulate` (>= 0 decodes as bit 0)."""
    symbols = np.asarray(symbols)
    sym_t = symbols.T  # (time, antenna)
    bits = np.empty(sym_t.shape + (2,), dtype=np.uint8)
    bits[..., 0] = sym_t.real < 0.0
    bits[..., 1] = sym_t.imag < 0.0
    return bits.reshape(-1)


def zf_detect(y: np.ndarray, h_hat: np.ndarray) -> np.ndarray:
    """Pseudo-inverse equalization (h^H h)^-1 h^H y, shape (nt, n_symbols)."""
    y = np.asarray(y, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    if h_hat.shape[0] < h_hat.shape[1]:
        raise ShapeError(
            f"zero-forcing needs nr >= nt, got channel shape {h_hat.shape}"
        )
    if y.shape[0] != h_hat.shape[0]:
        raise ShapeError(f"received block has {y.shape[0]} rows, channel {h_hat.shape[0]}")
    hh = h_hat.conj().T
    try:
        gram_inv = inverse(hh @ h_hat)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"rank-deficient channel estimate: {exc}") from exc
    return gram_inv @ hh @ y


def ber_trial(
    h_true: np.ndarray,
    h_hat: np.ndarray,
    snr_db: float,
    n_bits: int,
    rng: RngStream,
) -> float:
    """Bit error rate of one QPSK frame through ``h_true`` detected with ``h_hat``."""
    h_true = np.asarray(h_true, dtype=np.complex128)
    nr, nt = h_true.shape
    if n_bits <= 0 or n_bits % (2 * nt) != 0:
        raise ShapeError(f"n_bits {n_bits} must be a positive multiple of 2*nt={2 * nt}")
    bits = rng.integers(0, 2, n_bits).astype(np.uint8)
    s = qpsk_modulate(bits, nt)
    sigma2 = 10.0 ** (-snr_db / 10.0)
    noise = sample_complex_gaussian_batch(rng, 1, nr, s.shape[1], sigma2)[0]
    y = h_true @ s + noise
    detected = qpsk_demodulate(zf_detect(y, h_hat))
    return float(np.mean(detected != bits))
