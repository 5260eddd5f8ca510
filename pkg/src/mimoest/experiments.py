"""Sweep harness: SNR, pilot-length, antenna, and Doppler experiments.

Every sweep emits one row per (grid value, estimator) with the aggregate NMSE
in dB (mean of linear per-sample NMSE, then dB) and the bit error rate from a
QPSK/zero-forcing data phase that reuses the same bits and noise for every
estimator at a point, so estimator comparisons are paired.

Determinism: all randomness at grid point ``k`` flows from streams keyed by
``(master_seed, DOMAIN_EVAL | k)`` and ``(master_seed, DOMAIN_LINK | k)``;
per-point retraining uses ``DOMAIN_TRAIN | k``.  Dataset samples use raw
stream indices, so evaluation never replays a training channel and results do
not depend on execution order or worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    ChannelConfig,
    doppler_coefficient,
    draw_channels,
    evolve_channels,
    generate_pilots,
    transmit_pilots_batch,
)
from .dataset import ChannelSample, generate_dataset
from .errors import ConfigurationError, MimoestError, ParameterError
from .estimators import DnnEstimator, LeastSquaresEstimator, LmmseEstimator
from .link import qpsk_demodulate, zf_detect
from .metrics import nmse_aggregate_db, nmse_linear_batch
from .numerics import (
    DOMAIN_EVAL,
    DOMAIN_LINK,
    DOMAIN_TRAIN,
    RngStream,
    sample_complex_gaussian_batch,
    stream_id,
)

DEFAULT_SNR_GRID = tuple(range(-10, 31, 5))
KNOWN_ESTIMATORS = ("ls", "lmmse", "mmse", "lmmse-matched", "mmse-matched", "dnn")


@dataclass(frozen=True)
class SweepConfig:
    """Grids, sample budgets, and seeds shared by all sweep kinds."""

    estimators: tuple = ("ls", "lmmse", "dnn")
    snr_grid: tuple = DEFAULT_SNR_GRID
    pilot_grid: tuple = (2, 4, 8)
    antenna_grid: tuple = (2, 4, 8)
    doppler_grid: tuple = (30.0, 60.0, 90.0, 120.0)
    samples_per_point: int = 100
    ber_bits: int = 100_000
    master_seed: int = 42
    train_samples: int = 10_000
    train_epochs: int = 50
    train_lr: float = 1e-4
    snr_train_min: float = -10.0
    snr_train_max: float = 30.0
    threads: int = 1

    def __post_init__(self):
        if self.samples_per_point < 1:
            raise ParameterError("samples_per_point must be >= 1")
        if self.ber_bits < 1:
            raise ParameterError("ber_bits must be >= 1")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")
        for name in ("estimators", "snr_grid", "pilot_grid", "antenna_grid", "doppler_grid"):
            if len(getattr(self, name)) == 0:
                raise ParameterError(f"{name} must be nonempty")
        for est in self.estimators:
            if est not in KNOWN_ESTIMATORS:
                raise ParameterError(f"unknown estimator {est!r}; choose from {KNOWN_ESTIMATORS}")


@dataclass
class SweepRow:
    sweep: str
    variable: str
    estimator: str
    nmse_db: float | None
    ber: float | None
    n_samples: int
    wall_time_s: float


@dataclass
class SweepResult:
    kind: str
    rows: list = field(default_factory=list)


def _canonical_estimator(name: str) -> str:
    return {"mmse": "lmmse", "mmse-matched": "lmmse-matched"}.get(name, name)


def _build_estimator(name: str, channel_cfg: ChannelConfig, xp, model):
    name = _canonical_estimator(name)
    if name == "ls":
        return LeastSquaresEstimator().fit([], xp)
    if name == "lmmse":
        return LmmseEstimator(pilot_energy=channel_cfg.pilot_energy).fit([], xp)
    if name == "lmmse-matched":
        return LmmseEstimator(
            spatial_rho=channel_cfg.spatial_rho, pilot_energy=channel_cfg.pilot_energy
        ).fit([], xp)
    if name == "dnn":
        if model is None:
            raise ConfigurationError("the 'dnn' estimator needs a trained model")
        return DnnEstimator().with_model(model, xp)
    raise ParameterError(f"unknown estimator {name!r}")


def _bits_per_sample(ber_bits: int, n_samples: int, nt: int) -> int:
    per = max(ber_bits // n_samples, 2 * nt)
    return per - (per % (2 * nt))


def _modulate_batch(bits: np.ndarray, nt: int) -> np.ndarray:
    # Same Gray mapping/order as link.qpsk_modulate, over (n, n_bits) blocks.
    n = bits.shape[0]
    pairs = bits.reshape(n, -1, nt, 2).astype(np.float64)
    sym = ((1.0 - 2.0 * pairs[..., 0]) + 1j * (1.0 - 2.0 * pairs[..., 1])) / np.sqrt(2.0)
    return sym.transpose(0, 2, 1)


def evaluate_point(
    channel_cfg: ChannelConfig,
    snr_db: float,
    sweep_cfg: SweepConfig,
    estimator_names,
    point_index: int,
    model=None,
):
    """Evaluate all estimators on fresh seeded channels at one SNR.

    Returns ``{estimator: (nmse_linear_values, ber, n, seconds)}``.  The true
    channel is the pilot-time channel advanced one symbol by the AR(1) Doppler
    model (an exact no-op at zero velocity), so mobility stresses every sweep
    through the same code path.
    """
    n = sweep_cfg.samples_per_point
    xp = generate_pilots(channel_cfg.nt, channel_cfg.pilot_len, channel_cfg.pilot_energy)
    rng_eval = RngStream(sweep_cfg.master_seed, stream_id(DOMAIN_EVAL, point_index))

    h_pilot = draw_channels(channel_cfg, rng_eval, n)
    rho_t = doppler_coefficient(
        channel_cfg.velocity_kmh, channel_cfg.carrier_hz, channel_cfg.symbol_s
    )
    h_data = evolve_channels(h_pilot, rho_t, channel_cfg, rng_eval)
    y = transmit_pilots_batch(h_pilot, xp, snr_db, rng_eval, channel_cfg.pilot_energy)
    samples = [
        ChannelSample(h_true=h_data[i], y=y[i], snr_db=snr_db, doppler_kmh=channel_cfg.velocity_kmh)
        for i in range(n)
    ]

    # Shared data phase: same bits and noise for every estimator.
    rng_link = RngStream(sweep_cfg.master_seed, stream_id(DOMAIN_LINK, point_index))
    n_bits = _bits_per_sample(sweep_cfg.ber_bits, n, channel_cfg.nt)
    bits = rng_link.integers(0, 2, (n, n_bits)).astype(np.uint8)
    s = _modulate_batch(bits, channel_cfg.nt)
    data_sigma2 = 10.0 ** (-snr_db / 10.0)
    data_noise = sample_complex_gaussian_batch(
        rng_link, n, channel_cfg.nr, s.shape[2], data_sigma2
    )
    y_data = h_data @ s + data_noise

    out = {}
    for name in estimator_names:
        label = _canonical_estimator(name)
        start = time.perf_counter()
        try:
            est = _build_estimator(name, channel_cfg, xp, model)
            h_hat = est.predict(samples)
            nmse_values = nmse_linear_batch(h_data, h_hat)
            errors = 0
            for i in range(n):
                detected = qpsk_demodulate(zf_detect(y_data[i], h_hat[i]))
                errors += int(np.sum(detected != bits[i]))
            ber = errors / (n * n_bits)
            out[label] = (nmse_values, ber, n, time.perf_counter() - start)
        except MimoestError:
            out[label] = (None, None, 0, time.perf_counter() - start)
    return out


def _rows_from_point(kind, variable, point_result, estimator_names):
    rows = []
    for name in estimator_names:
        label = _canonical_estimator(name)
        nmse_values, ber, n, seconds = point_result[label]
        rows.append(
            SweepRow(
                sweep=kind,
                variable=variable,
                estimator=label,
                nmse_db=None if nmse_values is None else nmse_aggregate_db(nmse_values),
                ber=ber,
                n_samples=n,
                wall_time_s=seconds,
            )
        )
    return rows


def format_variable(value) -> str:
    if isinstance(value, str):
        return value
    as_float = float(value)
    if as_float.is_integer():
        return str(int(as_float))
    return repr(as_float)


def snr_sweep(channel_cfg: ChannelConfig, sweep_cfg: SweepConfig, model=None) -> SweepResult:
    """NMSE/BER as a function of SNR on fresh seeded test channels."""
    _require_model_if_dnn(sweep_cfg, model)
    tasks = [
        (channel_cfg, float(snr), sweep_cfg, sweep_cfg.estimators, k, model)
        for k, snr in enumerate(sweep_cfg.snr_grid)
    ]
    result = SweepResult(kind="snr")
    for (snr, point) in _run_eval_points(tasks, sweep_cfg.threads):
        result.rows.extend(
            _rows_from_point("snr", format_variable(snr), point, sweep_cfg.estimators)
        )
    return result


def doppler_sweep(channel_cfg: ChannelConfig, sweep_cfg: SweepConfig, model=None) -> SweepResult:
    """Mobility sweep: per velocity, pool metrics across the SNR grid."""
    _require_model_if_dnn(sweep_cfg, model)
    result = SweepResult(kind="doppler")
    n_snr = len(sweep_cfg.snr_grid)
    for vi, velocity in enumerate(sweep_cfg.doppler_grid):
        cfg_v = replace(channel_cfg, velocity_kmh=float(velocity))
        tasks = [
            (cfg_v, float(snr), sweep_cfg, sweep_cfg.estimators, vi * n_snr + si, model)
            for si, snr in enumerate(sweep_cfg.snr_grid)
        ]
        pooled = {}
        for (_, point) in _run_eval_points(tasks, sweep_cfg.threads):
            for label, (nmse_values, ber, n, seconds) in point.items():
                agg = pooled.setdefault(label, {"nmse": [], "ber": [], "n": 0, "t": 0.0})
                agg["t"] += seconds
                if nmse_values is None:
                    agg["nmse"] = None
                elif agg["nmse"] is not None:
                    agg["nmse"].extend(list(nmse_values))
                    agg["ber"].append(ber)
                    agg["n"] += n
        for name in sweep_cfg.estimators:
            label = _canonical_estimator(name)
            agg = pooled[label]
            failed = agg["nmse"] is None or agg["n"] == 0
            result.rows.append(
                SweepRow(
                    sweep="doppler",
                    variable=format_variable(velocity),
                    estimator=label,
                    nmse_db=None if failed else nmse_aggregate_db(agg["nmse"]),
                    ber=None if failed else float(np.mean(agg["ber"])),
                    n_samples=0 if failed else agg["n"],
                    wall_time_s=agg["t"],
                )
            )
    return result


def pilot_sweep(channel_cfg: ChannelConfig, sweep_cfg: SweepConfig, eval_snr_db: float = 10.0) -> SweepResult:
    """Per pilot length: regenerate data, retrain the DNN, evaluate at one SNR.

    Grid values below ``nt`` are recorded as rows with empty metrics and the
    sweep continues.
    """
    tasks = []
    for k, pilot_len in enumerate(sweep_cfg.pilot_grid):
        tasks.append((channel_cfg, int(pilot_len), sweep_cfg, eval_snr_db, k))
    result = SweepResult(kind="pilot")
    for pilot_len, rows in _run_points(tasks, sweep_cfg.threads, _pilot_point_worker):
        result.rows.extend(rows)
    return result


def _pilot_point_worker(task):
    channel_cfg, pilot_len, sweep_cfg, eval_snr_db, k = task
    variable = format_variable(pilot_len)
    if pilot_len < channel_cfg.nt:
        rows = [
            SweepRow("pilot", variable, _canonical_estimator(n), None, None, 0, 0.0)
            for n in sweep_cfg.estimators
        ]
        return pilot_len, rows
    cfg_p = replace(channel_cfg, pilot_len=pilot_len)
    model = _train_point_model(cfg_p, sweep_cfg, k) if _wants_dnn(sweep_cfg) else None
    point = evaluate_point(cfg_p, eval_snr_db, sweep_cfg, sweep_cfg.estimators, k, model)
    return pilot_len, _rows_from_point("pilot", variable, point, sweep_cfg.estimators)


def antenna_sweep(channel_cfg: ChannelConfig, sweep_cfg: SweepConfig) -> SweepResult:
    """Per square antenna config: retrain, evaluate pooled over the SNR grid."""
    tasks = [
        (channel_cfg, int(n_ant), sweep_cfg, k)
        for k, n_ant in enumerate(sweep_cfg.antenna_grid)
    ]
    result = SweepResult(kind="antenna")
    for _, rows in _run_points(tasks, sweep_cfg.threads, _antenna_point_worker):
        result.rows.extend(rows)
    return result


def _antenna_point_worker(task):
    channel_cfg, n_ant, sweep_cfg, k = task
    cfg_n = replace(channel_cfg, nt=n_ant, nr=n_ant, pilot_len=n_ant)
    variable = f"{n_ant}x{n_ant}"
    model = _train_point_model(cfg_n, sweep_cfg, k) if _wants_dnn(sweep_cfg) else None
    n_snr = len(sweep_cfg.snr_grid)
    pooled = {}
    for si, snr in enumerate(sweep_cfg.snr_grid):
        point = evaluate_point(
            cfg_n, float(snr), sweep_cfg, sweep_cfg.estimators, k * n_snr + si, model
        )
        for label, (nmse_values, ber, n, seconds) in point.items():
            agg = pooled.setdefault(label, {"nmse": [], "ber": [], "n": 0, "t": 0.0})
            agg["t"] += seconds
            if nmse_values is None:
                agg["nmse"] = None
            elif agg["nmse"] is not None:
                agg["nmse"].extend(list(nmse_values))
                agg["ber"].append(ber)
                agg["n"] += n
    rows = []
    for name in sweep_cfg.estimators:
        label = _canonical_estimator(name)
        agg = pooled[label]
        failed = agg["nmse"] is None or agg["n"] == 0
        rows.append(
            SweepRow(
                sweep="antenna",
                variable=variable,
                estimator=label,
                nmse_db=None if failed else nmse_aggregate_db(agg["nmse"]),
                ber=None if failed else float(np.mean(agg["ber"])),
                n_samples=0 if failed else agg["n"],
                wall_time_s=agg["t"],
            )
        )
    return n_ant, rows


def _wants_dnn(sweep_cfg: SweepConfig) -> bool:
    return any(_canonical_estimator(n) == "dnn" for n in sweep_cfg.estimators)


def _require_model_if_dnn(sweep_cfg: SweepConfig, model) -> None:
    if _wants_dnn(sweep_cfg) and model is None:
        raise ConfigurationError("sweep requests the 'dnn' estimator but no model was given")


def _train_point_model(channel_cfg: ChannelConfig, sweep_cfg: SweepConfig, point_index: int):
    """Retrain the refiner for one sweep point on freshly generated data."""
    ds = generate_dataset(
        channel_cfg,
        sweep_cfg.train_samples,
        sweep_cfg.snr_train_min,
        sweep_cfg.snr_train_max,
        sweep_cfg.master_seed,
    )
    est = DnnEstimator(
        max_epochs=sweep_cfg.train_epochs,
        lr=sweep_cfg.train_lr,
        train_seed=sweep_cfg.master_seed,
        train_stream=stream_id(DOMAIN_TRAIN, point_index),
    )
    est.fit(ds.samples, ds.xp)
    return est.model_


def _run_eval_points(tasks, threads):
    """Run evaluate_point tasks, preserving grid order; parallel when asked."""
    variables = [t[1] for t in tasks]
    if threads == 1 or len(tasks) == 1:
        results = [evaluate_point(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_eval_point_star, tasks))
    return list(zip(variables, results))


def _eval_point_star(task):
    return evaluate_point(*task)


def _run_points(tasks, threads, worker):
    if threads == 1 or len(tasks) == 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# CSV schema: sweep,variable,estimator,nmse_db,ber,n_samples,wall_time_s
# ---------------------------------------------------------------------------

CSV_HEADER = "sweep,variable,estimator,nmse_db,ber,n_samples,wall_time_s"


def _fmt_metric(x) -> str:
    return "" if x is None else repr(float(x))


def export_csv(result: SweepResult, path, timing: bool = False) -> None:
    """Write the sweep table with canonical float formatting and LF endings.

    ``timing=False`` (the default) writes 0.0 in the wall_time_s column so that
    reruns with the same seed are byte-identical; real timings live in run
    manifests and in memory on the result rows.
    """
    lines = [CSV_HEADER]
    for row in result.rows:
        wall = row.wall_time_s if timing else 0.0
        lines.append(
            f"{row.sweep},{row.variable},{row.estimator},"
            f"{_fmt_metric(row.nmse_db)},{_fmt_metric(row.ber)},"
            f"{row.n_samples},{repr(float(wall))}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> SweepResult:
    """Parse a sweep CSV back into rows (inverse of :func:`export_csv`)."""
    from .errors import FormatError

    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != CSV_HEADER:
        raise FormatError(f"unexpected CSV header: {lines[0] if lines else '<empty>'}")
    rows = []
    for line in lines[1:]:
        if line == "":
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise FormatError(f"malformed CSV row: {line!r}")
        rows.append(
            SweepRow(
                sweep=parts[0],
                variable=parts[1],
                estimator=parts[2],
                nmse_db=None if parts[3] == "" else float(parts[3]),
                ber=None if parts[4] == "" else float(parts[4]),
                n_samples=int(parts[5]),
                wall_time_s=float(parts[6]),
            )
        )
    kind = rows[0].sweep if rows else "empty"
    return SweepResult(kind=kind, rows=rows)
