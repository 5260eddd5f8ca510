"""Monte-Carlo channel dataset generation, splitting, and persistence.

A dataset is an ordered list of independent pilot observations that share one
pilot matrix.  Sample ``i`` is produced entirely from ``RngStream(seed, i)``,
so regeneration is reproducible regardless of how many samples are drawn, in
what order, or on how many workers.

Files use the "MDS1" format: little-endian header, the shared pilot matrix,
then fixed-size per-sample records.  Payload values are float32; in-memory
samples are quantized to float32 precision at creation so that
``load(save(ds))`` reproduces the dataset bit for bit.  The same format is the
import path for externally produced channel dumps.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelConfig,
    doppler_coefficient,
    draw_channels,
    evolve_channels,
    generate_pilots,
    noise_variance,
)
from .errors import CorruptionError, DataError, FormatError, ParameterError
from .numerics import RngStream, sample_complex_gaussian_batch

_MAGIC = b"MDS1"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQQff")  # magic, version, nt, nr, P, count, seed, Ep, rho

DEFAULT_TRAIN_FRACTION = 0.8


@dataclass
class ChannelSample:
    """One pilot observation: true channel, received pilots, and conditions."""

    h_true: np.ndarray  # (nr, nt) complex128 (float32-exact values)
    y: np.ndarray  # (nr, P) complex128 (float32-exact values)
    snr_db: float
    doppler_kmh: float


@dataclass
class Dataset:
    """Ordered channel samples plus the generation metadata they came from."""

    nt: int
    nr: int
    pilot_len: int
    pilot_energy: float
    spatial_rho: float
    seed: int
    xp: np.ndarray
    samples: list
    split_index: int
    format_version: int = _VERSION

    @property
    def sample_count(self) -> int:
        return len(self.samples)

    def same_bits(self, other: "Dataset") -> bool:
        """True when every header field, pilot entry, and sample matches exactly."""
        if (
            (self.nt, self.nr, self.pilot_len, self.seed, self.split_index, self.format_version)
            != (other.nt, other.nr, other.pilot_len, other.seed, other.split_index, other.format_version)
            or self.pilot_energy != other.pilot_energy
            or self.spatial_rho != other.spatial_rho
            or self.sample_count != other.sample_count
            or not np.array_equal(self.xp, other.xp)
        ):
            return False
        for a, b in zip(self.samples, other.samples):
            if a.snr_db != b.snr_db or a.doppler_kmh != b.doppler_kmh:
                return False
            if not np.array_equal(a.h_true, b.h_true) or not np.array_equal(a.y, b.y):
                return False
        return True


def _quantize_c(a: np.ndarray) -> np.ndarray:
    return a.astype(np.complex64).astype(np.complex128)


def _quantize_f(x: float) -> float:
    return float(np.float32(x))


def generate_dataset(
    cfg: ChannelConfig,
    n_samples: int,
    snr_min_db: float,
    snr_max_db: float,
    seed: int,
) -> Dataset:
    """Draw ``n_samples`` independent pilot observations.

    Each sample's SNR is uniform on [snr_min_db, snr_max_db].  With
    ``cfg.velocity_kmh > 0`` the stored true channel is the pilot-time channel
    evolved by one symbol of AR(1) Doppler drift, so estimators trained on the
    file learn the pilot-to-data-time mapping; at zero velocity the pilot-time
    channel is stored unchanged.
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if snr_min_db > snr_max_db:
        raise ParameterError(f"snr_min {snr_min_db} exceeds snr_max {snr_max_db}")

    xp = _quantize_c(generate_pilots(cfg.nt, cfg.pilot_len, cfg.pilot_energy))
    rho_t = doppler_coefficient(cfg.velocity_kmh, cfg.carrier_hz, cfg.symbol_s)

    samples = []
    for i in range(n_samples):
        rng = RngStream(seed, i)
        snr_db = _quantize_f(rng.uniform(snr_min_db, snr_max_db))
        h_pilot = draw_channels(cfg, rng, 1)
        noise = sample_complex_gaussian_batch(
            rng, 1, cfg.nr, cfg.pilot_len, noise_variance(snr_db, cfg.pilot_energy)
        )
        y = h_pilot[0] @ xp + noise[0]
        if cfg.velocity_kmh > 0.0:
            h_true = evolve_channels(h_pilot, rho_t, cfg, rng)[0]
        else:
            h_true = h_pilot[0]
        samples.append(
            ChannelSample(
                h_true=_quantize_c(h_true),
                y=_quantize_c(y),
                snr_db=snr_db,
                doppler_kmh=_quantize_f(cfg.velocity_kmh),
            )
        )

    return Dataset(
        nt=cfg.nt,
        nr=cfg.nr,
        pilot_len=cfg.pilot_len,
        pilot_energy=_quantize_f(cfg.pilot_energy),
        spatial_rho=_quantize_f(cfg.spatial_rho),
        seed=int(seed),
        xp=xp,
        samples=samples,
        split_index=int(math.floor(DEFAULT_TRAIN_FRACTION * n_samples)),
    )


def split(ds: Dataset, train_fraction: float = DEFAULT_TRAIN_FRACTION):
    """Deterministic prefix/suffix split (generation order is already random).

    Returns ``(train_samples, test_samples)`` sharing the dataset's pilot
    matrix; both sides must be nonempty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    k = int(math.floor(train_fraction * ds.sample_count))
    if k == 0 or k == ds.sample_count:
        raise ParameterError(
            f"fraction {train_fraction} leaves an empty side for {ds.sample_count} samples"
        )
    return ds.samples[:k], ds.samples[k:]


def save(ds: Dataset, path) -> None:
    """Write the MDS1 file for this dataset."""
    chunks = [
        _HEADER.pack(
            _MAGIC,
            ds.format_version,
            ds.nt,
            ds.nr,
            ds.pilot_len,
            ds.sample_count,
            ds.seed & 0xFFFFFFFFFFFFFFFF,
            np.float32(ds.pilot_energy),
            np.float32(ds.spatial_rho),
        ),
        np.ascontiguousarray(ds.xp, dtype="<c8").tobytes(),
    ]
    for s in ds.samples:
        chunks.append(struct.pack("<ff", np.float32(s.snr_db), np.float32(s.doppler_kmh)))
        chunks.append(np.ascontiguousarray(s.h_true, dtype="<c8").tobytes())
        chunks.append(np.ascontiguousarray(s.y, dtype="<c8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load(path) -> Dataset:
    """Read an MDS1 file, validating layout and payload sanity."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != _MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    if len(buf) < _HEADER.size:
        raise CorruptionError("dataset header truncated")
    magic, version, nt, nr, pilot_len, count, seed, pilot_energy, spatial_rho = _HEADER.unpack(
        buf[: _HEADER.size]
    )
    if version != _VERSION:
        raise FormatError(f"unsupported dataset format version {version}")
    if nt < 1 or nr < 1 or pilot_len < nt:
        raise FormatError(
            f"invalid header geometry nt={nt} nr={nr} pilot_len={pilot_len}"
        )

    xp_bytes = 8 * nt * pilot_len
    sample_bytes = 8 + 8 * nr * nt + 8 * nr * pilot_len
    expected = _HEADER.size + xp_bytes + count * sample_bytes
    if len(buf) != expected:
        raise CorruptionError(
            f"dataset payload is {len(buf)} bytes, expected {expected}"
        )

    pos = _HEADER.size
    xp = np.frombuffer(buf[pos: pos + xp_bytes], dtype="<c8").reshape(nt, pilot_len)
    pos += xp_bytes
    samples = []
    for _ in range(count):
        snr_db, doppler_kmh = struct.unpack("<ff", buf[pos: pos + 8])
        pos += 8
        h = np.frombuffer(buf[pos: pos + 8 * nr * nt], dtype="<c8").reshape(nr, nt)
        pos += 8 * nr * nt
        y = np.frombuffer(buf[pos: pos + 8 * nr * pilot_len], dtype="<c8").reshape(nr, pilot_len)
        pos += 8 * nr * pilot_len
        samples.append(
            ChannelSample(
                h_true=h.astype(np.complex128),
                y=y.astype(np.complex128),
                snr_db=float(snr_db),
                doppler_kmh=float(doppler_kmh),
            )
        )

    ds = Dataset(
        nt=nt,
        nr=nr,
        pilot_len=pilot_len,
        pilot_energy=float(pilot_energy),
        spatial_rho=float(spatial_rho),
        seed=seed,
        xp=xp.astype(np.complex128),
        samples=samples,
        split_index=int(math.floor(DEFAULT_TRAIN_FRACTION * count)),
        format_version=version,
    )
    for s in ds.samples:
        if not (np.all(np.isfinite(s.h_true)) and np.all(np.isfinite(s.y))):
            raise CorruptionError("dataset contains non-finite channel entries")
    if not np.all(np.isfinite(ds.xp)):
        raise CorruptionError("dataset pilot matrix contains non-finite entries")
    return ds
