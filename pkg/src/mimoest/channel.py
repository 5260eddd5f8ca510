"""Synthetic MIMO fading channels, pilot construction, and pilot transmission.

The generator is block Rayleigh fading with optional Kronecker spatial
correlation (exponential profile, coefficient ``spatial_rho`` on both array
sides) and AR(1) time evolution whose coefficient follows the Jakes
autocorrelation J0(2*pi*fd*Ts).  Pilots are rows of the P x P DFT matrix,
which are orthogonal and constant-modulus for any P >= Nt.

SNR convention used everywhere in this package: ``snr_db`` is per-symbol
energy over complex noise power, so the received pilot block is
``Y = H @ Xp + N`` with per-entry noise variance
``sigma^2 = pilot_energy * 10**(-snr_db / 10)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import IdentifiabilityError, ParameterError, ShapeError
from .numerics import RngStream, cholesky, sample_complex_gaussian_batch

SPEED_OF_LIGHT_M_S = 2.99792458e8

# J0 power series is accurate and fast for the Doppler arguments in scope.
_J0_MAX_ARG = 20.0
_J0_MIN_TERMS = 12


@dataclass(frozen=True)
class ChannelConfig:
    """Antenna geometry, pilot shape, and fading parameters for one link."""

    nt: int = 4
    nr: int = 4
    pilot_len: int = 4
    spatial_rho: float = 0.7
    velocity_kmh: float = 0.0
    carrier_hz: float = 2.6e9
    symbol_s: float = 66.7e-6
    pilot_energy: float = 1.0

    def __post_init__(self):
        if self.nt < 1 or self.nr < 1:
            raise ParameterError(f"antenna counts must be >= 1, got {self.nt}x{self.nr}")
        if self.pilot_len < self.nt:
            raise ParameterError(
                f"pilot_len must be >= nt for identifiability, got P={self.pilot_len} nt={self.nt}"
            )
        if not 0.0 <= self.spatial_rho < 1.0:
            raise ParameterError(f"spatial_rho must lie in [0, 1), got {self.spatial_rho}")
        if self.velocity_kmh < 0.0:
            raise ParameterError(f"velocity must be nonnegative, got {self.velocity_kmh}")
        if self.carrier_hz <= 0.0 or self.symbol_s <= 0.0:
            raise ParameterError("carrier frequency and symbol period must be positive")
        if self.pilot_energy <= 0.0:
            raise ParameterError(f"pilot_energy must be positive, got {self.pilot_energy}")


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    """Correlation matrix [R]_jk = rho^|j-k| (complex dtype for later algebra)."""
    if not 0.0 <= rho < 1.0:
        raise ParameterError(f"correlation coefficient must lie in [0, 1), got {rho}")
    idx = np.arange(n)
    return (rho ** np.abs(idx[:, None] - idx[None, :])).astype(np.complex128)


@lru_cache(maxsize=64)
def _correlation_root(n: int, rho: float) -> np.ndarray:
    if rho == 0.0:
        return np.eye(n, dtype=np.complex128)
    return cholesky(exponential_correlation(n, rho))


def draw_channel(cfg: ChannelConfig, rng: RngStream) -> np.ndarray:
    """One Kronecker-correlated Rayleigh realization, shape (nr, nt), E|h|^2 = 1."""
    return draw_channels(cfg, rng, 1)[0]


def draw_channels(cfg: ChannelConfig, rng: RngStream, n: int) -> np.ndarray:
    """Batch of ``n`` independent realizations, shape (n, nr, nt)."""
    w = sample_complex_gaussian_batch(rng, n, cfg.nr, cfg.nt, 1.0)
    if cfg.spatial_rho == 0.0:
        return w
    l_r = _correlation_root(cfg.nr, cfg.spatial_rho)
    l_t = _correlation_root(cfg.nt, cfg.spatial_rho)
    return l_r @ w @ l_t.conj().T


def bessel_j0(x: float) -> float:
    """Order-zero Bessel function by its power series, valid for |x| < 20."""
    if abs(x) >= _J0_MAX_ARG:
        raise ParameterError(f"J0 power series only supported for |x| < {_J0_MAX_ARG}")
    q = -0.25 * x * x
    term = 1.0
    total = 1.0
    k = 1
    while k <= _J0_MIN_TERMS or abs(term) > 1e-16 * abs(total):
        term *= q / (k * k)
        total += term
        k += 1
        if k > 200:  # pragma: no cover - unreachable for |x| < 20
            break
    return total


def doppler_coefficient(velocity_kmh: float, carrier_hz: float, symbol_s: float) -> float:
    """AR(1) coefficient rho_t = J0(2*pi*fd*Ts) for speed in km/h."""
    if velocity_kmh < 0.0:
        raise ParameterError(f"velocity must be nonnegative, got {velocity_kmh}")
    if carrier_hz <= 0.0 or symbol_s <= 0.0:
        raise ParameterError("carrier frequency and symbol period must be positive")
    doppler_hz = (velocity_kmh / 3.6) * carrier_hz / SPEED_OF_LIGHT_M_S
    return bessel_j0(2.0 * math.pi * doppler_hz * symbol_s)


def evolve_channel(
    prev: np.ndarray, rho_t: float, cfg: ChannelConfig, rng: RngStream
) -> np.ndarray:
    """AR(1) step: rho_t * prev + sqrt(1 - rho_t^2) * fresh draw."""
    if abs(rho_t) > 1.0:
        raise ParameterError(f"|rho_t| must be <= 1, got {rho_t}")
    innovation = draw_channel(cfg, rng)
    return rho_t * prev + math.sqrt(max(0.0, 1.0 - rho_t * rho_t)) * innovation


def evolve_channels(
    prev: np.ndarray, rho_t: float, cfg: ChannelConfig, rng: RngStream
) -> np.ndarray:
    """Batched AR(1) step over a stack of realizations (n, nr, nt)."""
    if abs(rho_t) > 1.0:
        raise ParameterError(f"|rho_t| must be <= 1, got {rho_t}")
    innovation = draw_channels(cfg, rng, prev.shape[0])
    return rho_t * prev + math.sqrt(max(0.0, 1.0 - rho_t * rho_t)) * innovation


def generate_pilots(nt: int, pilot_len: int, pilot_energy: float = 1.0) -> np.ndarray:
    """First ``nt`` rows of the P x P DFT matrix, scaled to per-symbol energy.

    Rows are mutually orthogonal with ``Xp @ Xp^H = pilot_energy * P * I`` and
    every entry has |x|^2 = pilot_energy (constant modulus).
    """
    if pilot_len < nt:
        raise IdentifiabilityError(
            f"pilot_len must be >= nt, got P={pilot_len} nt={nt}"
        )
    if pilot_energy <= 0.0:
        raise ParameterError(f"pilot_energy must be positive, got {pilot_energy}")
    t = np.arange(nt)[:, None]
    p = np.arange(pilot_len)[None, :]
    theta = -2.0 * np.pi * ((t * p) % pilot_len) / pilot_len
    xp = np.sqrt(pilot_energy) * (np.cos(theta) + 1j * np.sin(theta))
    # Snap near-zero / near-unit components so small P cases are exact.
    amp = np.sqrt(pilot_energy)
    re, im = xp.real.copy(), xp.imag.copy()
    for comp in (re, im):
        comp[np.abs(comp) < 1e-12 * amp] = 0.0
        comp[np.abs(comp - amp) < 1e-12 * amp] = amp
        comp[np.abs(comp + amp) < 1e-12 * amp] = -amp
    return re + 1j * im


def noise_variance(snr_db: float, pilot_energy: float = 1.0) -> float:
    """Per-entry complex noise variance for the package SNR convention."""
    return pilot_energy * 10.0 ** (-snr_db / 10.0)


def transmit_pilots(
    h: np.ndarray,
    xp: np.ndarray,
    snr_db: float,
    rng: RngStream,
    pilot_energy: float = 1.0,
) -> np.ndarray:
    """Received pilot block Y = H @ Xp + N for one realization (nr, P)."""
    if h.shape[-1] != xp.shape[0]:
        raise ShapeError(
            f"channel has {h.shape[-1]} transmit ports but pilots have {xp.shape[0]} rows"
        )
    sigma2 = noise_variance(snr_db, pilot_energy)
    noise = sample_complex_gaussian_batch(rng, 1, h.shape[-2], xp.shape[1], sigma2)[0]
    return h @ xp + noise


def transmit_pilots_batch(
    h: np.ndarray,
    xp: np.ndarray,
    snr_db: float,
    rng: RngStream,
    pilot_energy: float = 1.0,
) -> np.ndarray:
    """Vectorized pilot transmission for a stack of channels (n, nr, nt)."""
    sigma2 = noise_variance(snr_db, pilot_energy)
    noise = sample_complex_gaussian_batch(rng, h.shape[0], h.shape[1], xp.shape[1], sigma2)
    return h @ xp + noise
