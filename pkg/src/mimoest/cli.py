"""Command-line interface: generate, train, evaluate, sweep.

Every invocation that writes an artifact also writes ``<out>.manifest``, a
plain key=value file with the fully resolved configuration, seed, paths, tool
version, and timestamps, so any output can be reproduced bit for bit from its
manifest.

Exit codes: 0 success, 2 argument error, 3 I/O or file-format error,
4 numerical failure (training divergence).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__, dataset, experiments, neural
from .channel import ChannelConfig
from .errors import (
    ConfigurationError,
    DataError,
    FormatError,
    MimoestError,
    NumericalError,
    ParameterError,
)
from .estimators import DnnEstimator, LeastSquaresEstimator, LmmseEstimator
from .experiments import SweepConfig
from .link import ber_trial
from .metrics import nmse_aggregate_db, nmse_linear_batch
from .numerics import DOMAIN_LINK, DOMAIN_TRAIN, RngStream, stream_id

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _default_threads() -> int:
    env = os.environ.get("MIMOEST_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _write_manifest(out_path: str, subcommand: str, resolved: dict, started: float) -> None:
    lines = [
        f"subcommand={subcommand}",
        f"tool_version={__version__}",
    ]
    for key in sorted(resolved):
        lines.append(f"{key}={resolved[key]}")
    lines.append(f"started_unix={started:.6f}")
    lines.append(f"ended_unix={time.time():.6f}")
    with open(out_path + ".manifest", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _csv_floats(text: str):
    return tuple(float(v) for v in text.split(",") if v != "")


def _csv_ints(text: str):
    return tuple(int(v) for v in text.split(",") if v != "")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    started = time.time()
    cfg = ChannelConfig(
        nt=args.nt,
        nr=args.nr,
        pilot_len=args.pilot_len,
        spatial_rho=args.spatial_rho,
        velocity_kmh=args.doppler_kmh,
        pilot_energy=args.pilot_energy,
    )
    if args.samples < 1:
        raise ParameterError(f"--samples must be >= 1, got {args.samples}")
    ds = dataset.generate_dataset(cfg, args.samples, args.snr_min, args.snr_max, args.seed)
    dataset.save(ds, args.out)
    _write_manifest(
        args.out,
        "generate",
        {
            "nt": args.nt,
            "nr": args.nr,
            "pilot_len": args.pilot_len,
            "samples": args.samples,
            "snr_min": args.snr_min,
            "snr_max": args.snr_max,
            "spatial_rho": args.spatial_rho,
            "doppler_kmh": args.doppler_kmh,
            "pilot_energy": args.pilot_energy,
            "seed": args.seed,
            "out": args.out,
        },
        started,
    )
    print(f"wrote {ds.sample_count} samples ({ds.nr}x{ds.nt}, P={ds.pilot_len}) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    started = time.time()
    ds = dataset.load(args.data)
    train_samples, _ = dataset.split(ds)
    if args.lr == 0.0:
        print("warning: --lr 0 leaves parameters at their initialization", file=sys.stderr)
    cfg = neural.MlpConfig.for_channel(
        ds.nt,
        ds.nr,
        lr=args.lr,
        weight_decay=args.weight_decay,
        max_epochs=args.epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        init_seed=args.seed,
    )
    rng = RngStream(args.seed, stream_id(DOMAIN_TRAIN, 0))
    model, report = neural.train(train_samples, ds.xp, cfg, rng)
    neural.save_model(model, report, args.out)
    _write_manifest(
        args.out,
        "train",
        {
            "data": args.data,
            "epochs": args.epochs,
            "lr": args.lr,
            "weight_decay": args.weight_decay,
            "patience": args.patience,
            "batch_size": args.batch_size,
            "seed": args.seed,
            "out": args.out,
        },
        started,
    )
    print(
        f"trained {len(report.train_loss)} epochs: "
        f"final train loss {report.train_loss[-1]:.6g}, "
        f"final val loss {report.val_loss[-1]:.6g}, "
        f"best epoch {report.best_epoch} (val {report.val_loss[report.best_epoch]:.6g})"
        + (", stopped early" if report.stopped_early else "")
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _parse_estimators(text: str):
    names = tuple(t.strip().lower() for t in text.split(",") if t.strip())
    if not names:
        raise ParameterError("--estimators must name at least one estimator")
    for n in names:
        if n not in experiments.KNOWN_ESTIMATORS:
            raise ParameterError(
                f"unknown estimator {n!r}; choose from {experiments.KNOWN_ESTIMATORS}"
            )
    return names


def _build_eval_estimator(name, ds, model):
    name = experiments._canonical_estimator(name)
    if name == "ls":
        return LeastSquaresEstimator().fit([], ds.xp)
    if name == "lmmse":
        return LmmseEstimator(pilot_energy=ds.pilot_energy).fit([], ds.xp)
    if name == "lmmse-matched":
        return LmmseEstimator(spatial_rho=ds.spatial_rho, pilot_energy=ds.pilot_energy).fit([], ds.xp)
    if model is None:
        raise ParameterError("--estimators dnn requires --model")
    if (model.nr, model.nt) != (ds.nr, ds.nt):
        raise FormatError(
            f"model was trained for {model.nr}x{model.nt} channels, dataset is {ds.nr}x{ds.nt}"
        )
    return DnnEstimator().with_model(model, ds.xp)


def cmd_evaluate(args) -> int:
    started = time.time()
    names = _parse_estimators(args.estimators)
    ds = dataset.load(args.data)
    model = None
    if any(experiments._canonical_estimator(n) == "dnn" for n in names):
        if args.model is None:
            raise ParameterError("--estimators dnn requires --model")
        model, _ = neural.load_model(args.model)
    _, test_samples = dataset.split(ds)

    if args.snr == "all":
        bins = {"all": list(test_samples)}
    else:
        grid = _csv_floats(args.snr)
        if not grid:
            raise ParameterError(f"--snr must be 'all' or a comma list, got {args.snr!r}")
        bins = {experiments.format_variable(g): [] for g in grid}
        keys = np.array(list(grid))
        for s in test_samples:
            nearest = keys[int(np.argmin(np.abs(keys - s.snr_db)))]
            bins[experiments.format_variable(nearest)].append(s)

    rows = []
    for name in names:
        label = experiments._canonical_estimator(name)
        est = _build_eval_estimator(name, ds, model)
        for variable, samples in bins.items():
            if not samples:
                rows.append(
                    experiments.SweepRow("evaluate", variable, label, None, None, 0, 0.0)
                )
                print(f"{label:14s} snr={variable:>5s}  (no test samples in bin)")
                continue
            t0 = time.perf_counter()
            h_true = np.stack([s.h_true for s in samples])
            h_hat = est.predict(samples)
            agg_db = nmse_aggregate_db(nmse_linear_batch(h_true, h_hat))
            errors = 0.0
            for i, s in enumerate(samples):
                rng = RngStream(args.seed, stream_id(DOMAIN_LINK, i))
                errors += ber_trial(s.h_true, h_hat[i], s.snr_db, args.bits_per_sample, rng)
            ber = errors / len(samples)
            rows.append(
                experiments.SweepRow(
                    "evaluate", variable, label, agg_db, ber, len(samples),
                    time.perf_counter() - t0,
                )
            )
            print(
                f"{label:14s} snr={variable:>5s}  nmse_db={agg_db!r:>22s}  "
                f"ber={ber:.6g}  n={len(samples)}"
            )

    if args.csv:
        experiments.export_csv(experiments.SweepResult("evaluate", rows), args.csv)
        _write_manifest(
            args.csv,
            "evaluate",
            {
                "data": args.data,
                "model": args.model or "",
                "estimators": ",".join(names),
                "snr": args.snr,
                "bits_per_sample": args.bits_per_sample,
                "seed": args.seed,
                "csv": args.csv,
            },
            started,
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    started = time.time()
    names = _parse_estimators(args.estimators)
    base_cfg = ChannelConfig(
        nt=args.nt,
        nr=args.nr,
        pilot_len=args.pilot_len,
        spatial_rho=args.spatial_rho,
        velocity_kmh=args.doppler_kmh,
        pilot_energy=args.pilot_energy,
    )
    sweep_cfg = SweepConfig(
        estimators=names,
        snr_grid=_csv_floats(args.snr_grid),
        pilot_grid=_csv_ints(args.pilot_grid),
        antenna_grid=_csv_ints(args.antenna_grid),
        doppler_grid=_csv_floats(args.doppler_grid),
        samples_per_point=args.samples_per_point,
        ber_bits=args.ber_bits,
        master_seed=args.seed,
        train_samples=args.train_samples,
        train_epochs=args.epochs,
        threads=args.threads,
    )

    model = None
    wants_dnn = any(experiments._canonical_estimator(n) == "dnn" for n in names)
    if args.kind in ("snr", "doppler") and wants_dnn:
        if args.model:
            model, _ = neural.load_model(args.model)
        else:
            print(
                f"training refiner on {sweep_cfg.train_samples} generated samples "
                f"({sweep_cfg.train_epochs} epochs)...",
                file=sys.stderr,
            )
            model = experiments._train_point_model(base_cfg, sweep_cfg, 0)

    if args.kind == "snr":
        result = experiments.snr_sweep(base_cfg, sweep_cfg, model)
    elif args.kind == "doppler":
        result = experiments.doppler_sweep(base_cfg, sweep_cfg, model)
    elif args.kind == "pilot":
        result = experiments.pilot_sweep(base_cfg, sweep_cfg, eval_snr_db=args.eval_snr)
    else:
        result = experiments.antenna_sweep(base_cfg, sweep_cfg)

    experiments.export_csv(result, args.out, timing=args.timing)
    _write_manifest(
        args.out,
        f"sweep {args.kind}",
        {
            "estimators": ",".join(names),
            "snr_grid": args.snr_grid,
            "pilot_grid": args.pilot_grid,
            "antenna_grid": args.antenna_grid,
            "doppler_grid": args.doppler_grid,
            "samples_per_point": args.samples_per_point,
            "ber_bits": args.ber_bits,
            "train_samples": args.train_samples,
            "epochs": args.epochs,
            "seed": args.seed,
            "threads": args.threads,
            "nt": args.nt,
            "nr": args.nr,
            "pilot_len": args.pilot_len,
            "spatial_rho": args.spatial_rho,
            "pilot_energy": args.pilot_energy,
            "doppler_kmh": args.doppler_kmh,
            "eval_snr": args.eval_snr,
            "model": args.model or "",
            "timing": args.timing,
            "out": args.out,
        },
        started,
    )
    print(f"wrote {len(result.rows)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimoest",
        description="Link-level MIMO channel estimation workbench",
    )
    parser.add_argument("--version", action="version", version=f"mimoest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("generate", help="generate a channel dataset file", formatter_class=fmt)
    g.add_argument("--nt", type=int, default=4, help="transmit antennas")
    g.add_argument("--nr", type=int, default=4, help="receive antennas")
    g.add_argument("--pilot-len", type=int, default=4, help="pilot symbols P (>= nt)")
    g.add_argument("--samples", type=int, default=10_000, help="number of Monte-Carlo samples")
    g.add_argument("--snr-min", type=float, default=-10.0, help="lower SNR bound (dB)")
    g.add_argument("--snr-max", type=float, default=30.0, help="upper SNR bound (dB)")
    g.add_argument("--spatial-rho", type=float, default=0.7, help="exponential antenna correlation")
    g.add_argument("--doppler-kmh", type=float, default=0.0, help="mobile speed (km/h)")
    g.add_argument("--pilot-energy", type=float, default=1.0, help="per-symbol pilot energy")
    g.add_argument("--seed", type=int, default=42, help="master seed")
    g.add_argument("--out", required=True, help="output dataset path (MDS1)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the neural refiner on a dataset", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset file (trains on its 80% split)")
    t.add_argument("--epochs", type=int, default=50, help="maximum training epochs")
    t.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    t.add_argument("--weight-decay", type=float, default=1e-5, help="decoupled weight decay")
    t.add_argument("--patience", type=int, default=5, help="early-stopping patience (epochs)")
    t.add_argument("--batch-size", type=int, default=8, help="minibatch size")
    t.add_argument("--seed", type=int, default=0, help="init/shuffle seed")
    t.add_argument("--out", required=True, help="output model path (MLPM)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate estimators on a dataset's test split", formatter_class=fmt)
    e.add_argument("--data", required=True, help="dataset file")
    e.add_argument("--model", help="model file (required for dnn)")
    e.add_argument("--estimators", default="ls,mmse,dnn", help="comma list: ls,mmse,dnn,mmse-matched")
    e.add_argument("--snr", default="all", help="'all' or comma list of bin centers (dB)")
    e.add_argument("--bits-per-sample", type=int, default=1000, help="QPSK bits per sample for BER")
    e.add_argument("--seed", type=int, default=0, help="seed for the BER data phase")
    e.add_argument("--csv", help="also write rows to this CSV path")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run a reproduction sweep and write CSV", formatter_class=fmt)
    s.add_argument("kind", choices=("snr", "pilot", "antenna", "doppler"), help="sweep kind")
    s.add_argument("--estimators", default="ls,lmmse,dnn", help="comma list of estimators")
    s.add_argument("--snr-grid", default="-10,-5,0,5,10,15,20,25,30", help="SNR grid (dB)")
    s.add_argument("--pilot-grid", default="2,4,8", help="pilot lengths")
    s.add_argument("--antenna-grid", default="2,4,8", help="square antenna counts")
    s.add_argument("--doppler-grid", default="30,60,90,120", help="speeds (km/h)")
    s.add_argument("--samples-per-point", type=int, default=100, help="test samples per grid point")
    s.add_argument("--ber-bits", type=int, default=100_000, help="QPSK bits per grid point")
    s.add_argument("--train-samples", type=int, default=10_000, help="samples for sweep-internal training")
    s.add_argument("--epochs", type=int, default=50, help="epochs for sweep-internal training")
    s.add_argument("--eval-snr", type=float, default=10.0, help="evaluation SNR for the pilot sweep (dB)")
    s.add_argument("--nt", type=int, default=4, help="transmit antennas (use 2 to run the full pilot grid)")
    s.add_argument("--nr", type=int, default=4, help="receive antennas")
    s.add_argument("--pilot-len", type=int, default=4, help="pilot symbols for snr/doppler sweeps")
    s.add_argument("--spatial-rho", type=float, default=0.7, help="exponential antenna correlation")
    s.add_argument("--doppler-kmh", type=float, default=0.0, help="base speed for snr/pilot/antenna sweeps")
    s.add_argument("--pilot-energy", type=float, default=1.0, help="per-symbol pilot energy")
    s.add_argument("--seed", type=int, default=42, help="master seed")
    s.add_argument("--threads", type=int, default=_default_threads(),
                   help="parallel workers (env MIMOEST_THREADS overrides the core count)")
    s.add_argument("--model", help="pre-trained model for snr/doppler sweeps")
    s.add_argument("--timing", action="store_true",
                   help="write measured wall times to the CSV (breaks byte-reproducibility)")
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MimoestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
