"""Command-line harness: synth | prepare | train | eval | predict | bench.

Exit codes: 0 success, 2 configuration failure, 3 data failure, 4 numerical
failure, 1 anything else. Heavy imports happen inside the subcommands so the
--deterministic flag can pin BLAS threading before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

REPORT_CUTOFFS = (1, 3, 9, 15)

logger = logging.getLogger("trajcast")


class DataError(ValueError):
    """Dataset-level failure (bad layout, not enough usable data)."""


class EmptySplitError(DataError):
    """A required split produced no usable windows."""


def _set_single_thread_env():
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, "1")


def _classify(exc: BaseException) -> int:
    from .baselines import SingularInnovationError
    from .codec import CodecError
    from .dataflow import ConfigError as SynthConfigError
    from .dataflow import InsufficientDaysError, ParseError, SchemaError
    from .model import (
        ConfigError,
        ConfigMismatchError,
        NonFiniteError,
        NonFiniteGradientError,
    )

    if isinstance(exc, (ConfigError, ConfigMismatchError, SynthConfigError)):
        return EXIT_CONFIG
    if isinstance(
        exc,
        (ParseError, SchemaError, InsufficientDaysError, CodecError, DataError,
         FileNotFoundError),
    ):
        return EXIT_DATA
    if isinstance(exc, (NonFiniteError, NonFiniteGradientError, SingularInnovationError)):
        return EXIT_NUMERIC
    return 1


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_tracks(data_dir, min_length: int):
    from . import dataflow

    paths = sorted(glob.glob(os.path.join(data_dir, "*.csv")))
    if not paths:
        raise DataError(f"no CSV files in {data_dir}")
    tracks = []
    for p in paths:
        tracks.extend(dataflow.load_csv(p, min_length=min_length))
    return tracks


def _test_windows(cfg, data_dir):
    from .dataflow import build_window_set, split_by_day

    k, n = cfg.model.k, cfg.model.n
    tracks = _load_tracks(data_dir, min_length=k + n)
    _, _, test_tracks = split_by_day(tracks)
    windows = build_window_set(test_tracks, k, n, 1, cfg.quant, cfg.widths).windows
    if not windows:
        raise EmptySplitError("test split produced no usable windows")
    return windows


def _collect_predictions(windows, predict_fn, n):
    """Truth/prediction value arrays for the metric tables."""
    import numpy as np

    count = len(windows)
    truth = {a: np.empty((count, n)) for a in ("lon", "lat", "alt")}
    pred = {a: np.empty((count, n)) for a in ("lon", "lat", "alt")}
    truth_lla = np.empty((count, n, 3))
    pred_lla = np.empty((count, n, 3))
    for i, w in enumerate(windows):
        points = predict_fn(w)
        if len(points) != n:
            raise DataError(f"predictor returned {len(points)} points, expected {n}")
        for j, (t, p) in enumerate(zip(w.targets, points)):
            for a in ("lon", "lat", "alt"):
                truth[a][i, j] = getattr(t, a)
                pred[a][i, j] = getattr(p, a)
            truth_lla[i, j] = (t.lon, t.lat, t.alt)
            pred_lla[i, j] = (p.lon, p.lat, p.alt)
    return truth, pred, truth_lla, pred_lla


def _predictors(model):
    from .baselines import kf_fit, kf_rollout

    n = model.config.n
    return {
        "direct": lambda w: model.predict(w.observations, "direct"),
        "autoregressive": lambda w: model.predict(w.observations, "autoregressive"),
        "kf": lambda w: kf_rollout(kf_fit(w.observations), n),
    }


def _mean_mde(model, windows, limit=None):
    from .metrics import mde

    subset = windows[: limit or len(windows)]
    _, _, truth_lla, pred_lla = _collect_predictions(
        subset, lambda w: model.predict(w.observations, "direct"), model.config.n
    )
    return mde(truth_lla, pred_lla, model.config.n)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .config import echo_config, load_run_config
    from .dataflow import SYNTH_EPOCH, day_of, synth_generate, write_csv

    cfg = load_run_config(args.config, args.seed)
    out = _out_dir(args.out)
    tracks = synth_generate(cfg.synth)
    base_day = SYNTH_EPOCH // 86400
    files = []
    for day in range(cfg.synth.days):
        day_tracks = [t for t in tracks if day_of(t) - base_day == day]
        name = f"day{day + 1:02d}.csv"
        write_csv(out / name, day_tracks)
        files.append(
            {
                "file": name,
                "flights": len(day_tracks),
                "points": sum(len(t) for t in day_tracks),
            }
        )
    manifest = {
        "flights": len(tracks),
        "points": sum(len(t) for t in tracks),
        "days": cfg.synth.days,
        "files": files,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    echo_config(out / "config.json", cfg, {"command": "synth"})
    print(f"wrote {len(tracks)} flights over {cfg.synth.days} days to {out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .config import echo_config, load_run_config
    from .dataflow import build_window_set, day_of, split_by_day

    cfg = load_run_config(args.config, args.seed)
    k, n = cfg.model.k, cfg.model.n
    tracks = _load_tracks(args.data, min_length=k + n)
    train_tracks, val_tracks, test_tracks = split_by_day(tracks)
    out = _out_dir(args.out or args.data)
    manifest = {"splits": {}, "k": k, "n": n}
    for name, split in (
        ("train", train_tracks),
        ("val", val_tracks),
        ("test", test_tracks),
    ):
        ws = build_window_set(split, k, n, 1, cfg.quant, cfg.widths)
        manifest["splits"][name] = {
            "tracks": len(split),
            "days": sorted({day_of(t) for t in split}),
            "windows": len(ws.windows),
            "rejected_windows": ws.rejected,
        }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    echo_config(out / "config.json", cfg, {"command": "prepare"})
    print(json.dumps(manifest["splits"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    import numpy as np

    from .config import echo_config, load_run_config
    from .dataflow import build_window_set, split_by_day, training_arrays
    from .model import Adam, Forecaster, load_checkpoint, save_checkpoint

    cfg = load_run_config(args.config, args.seed)
    k, n = cfg.model.k, cfg.model.n
    out = _out_dir(args.out)
    tracks = _load_tracks(args.data, min_length=k + n)
    train_tracks, val_tracks, _ = split_by_day(tracks)
    train_set = build_window_set(train_tracks, k, n, 1, cfg.quant, cfg.widths)
    val_windows = build_window_set(val_tracks, k, n, 1, cfg.quant, cfg.widths).windows
    if not train_set.windows:
        raise EmptySplitError("train split produced no usable windows")

    start_step = 0
    if args.resume:
        model, opt_state, start_step, _ = load_checkpoint(
            args.resume, expected_config=cfg.model_identity()
        )
        optimizer = Adam(model.params, lr=cfg.train.lr)
        if opt_state is not None:
            optimizer.load_state_dict(opt_state)
    else:
        model = Forecaster(cfg.model, cfg.quant, cfg.widths)
        optimizer = Adam(model.params, lr=cfg.train.lr)

    arrays = [training_arrays(w, cfg.quant, cfg.widths) for w in train_set.windows]
    obs = np.stack([a[0] for a in arrays])
    diffs = np.stack([a[1] for a in arrays])
    targets = np.stack([a[2] for a in arrays])
    window_count = len(arrays)

    rng = np.random.default_rng(cfg.train.seed)
    log_rows = []
    best_val = float("inf")
    total_steps = cfg.train.steps
    logger.info(
        "training on %d windows (%d rejected), %d parameters, %d steps",
        window_count, train_set.rejected, model.params.n_parameters(), total_steps,
    )
    loss = float("nan")
    for step in range(start_step + 1, total_steps + 1):
        idx = rng.integers(0, window_count, size=cfg.train.batch_size)
        loss = model.train_step(obs[idx], diffs[idx], targets[idx], optimizer)
        if step % cfg.train.eval_interval == 0 or step == total_steps:
            val_mde = (
                _mean_mde(model, val_windows, cfg.train.val_windows)
                if val_windows
                else float("nan")
            )
            log_rows.append((step, loss, val_mde))
            logger.info("step %d  loss %.6f  val MDE %.4f km", step, loss, val_mde)
            if val_mde < best_val:
                best_val = val_mde
                save_checkpoint(
                    out / "best.ckpt", model, optimizer, step,
                    extra={"best_val_mde_km": best_val},
                )
    save_checkpoint(
        out / "checkpoint.ckpt", model, optimizer, max(total_steps, start_step),
        extra={"final_loss": loss},
    )
    with open(out / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "val_mde_km"])
        for row in log_rows:
            writer.writerow([row[0], f"{row[1]:.10g}", f"{row[2]:.10g}"])
    echo_config(
        out / "config.json", cfg,
        {"command": "train", "deterministic": bool(args.deterministic)},
    )
    print(f"finished at step {max(total_steps, start_step)}, final loss {loss:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .config import echo_config, load_run_config, run_config_from_dict
    from .metrics import build_metric_table
    from .model import load_checkpoint

    expected = None
    cfg_file = None
    if args.config:
        cfg_file = load_run_config(args.config, args.seed)
        expected = cfg_file.model_identity()
    model, _, step, _ = load_checkpoint(args.ckpt, expected_config=expected)
    cfg = cfg_file or run_config_from_dict(
        {"model": model.config.to_dict()}
    )
    cfg = _with_model_sections(cfg, model)
    out = _out_dir(args.out)
    windows = _test_windows(cfg, args.data)
    if args.max_windows:
        windows = windows[: args.max_windows]
    n = model.config.n

    tables = {}
    for name, fn in _predictors(model).items():
        truth, pred, truth_lla, pred_lla = _collect_predictions(windows, fn, n)
        table = build_metric_table(name, truth, pred, truth_lla, pred_lla, cumulative=True)
        table.to_csv(out / f"metrics_{name}.csv")
        table.to_json(out / f"metrics_{name}.json")
        tables[name] = table
        if args.instantaneous:
            inst = build_metric_table(
                name, truth, pred, truth_lla, pred_lla, cumulative=False
            )
            inst.to_csv(out / f"metrics_{name}_instantaneous.csv")
            inst.to_json(out / f"metrics_{name}_instantaneous.json")

    with open(out / "mde_series.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(tables)
        writer.writerow(["horizon"] + [f"mde_km_{p}" for p in names])
        for h in range(1, n + 1):
            writer.writerow(
                [h] + [f"{tables[p].row(h).mde_km:.10g}" for p in names]
            )

    if args.dump_embeddings:
        _dump_embeddings(model, windows, args.dump_embeddings)

    echo_config(out / "config.json", cfg, {"command": "eval", "checkpoint_step": step})
    print(f"evaluated {len(windows)} windows from checkpoint step {step}")
    for name, table in tables.items():
        cuts = [h for h in REPORT_CUTOFFS if h <= n]
        series = "  ".join(f"h{h}={table.row(h).mde_km:.4f}" for h in cuts)
        print(f"  {name:>15s} MDE(km): {series}")
    return EXIT_OK


def _with_model_sections(cfg, model):
    import dataclasses

    from .config import RunConfig

    return RunConfig(
        model=model.config,
        quant=model.quant,
        widths=model.widths,
        synth=cfg.synth,
        train=cfg.train,
    )


def _dump_embeddings(model, windows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = model.config.model_dim
        writer.writerow(["flight_id", "start_timestamp"] + [f"e{i}" for i in range(dim)])
        for w in windows:
            vec = model.traj_encoding(w.observations)
            writer.writerow(
                [w.flight_id, w.start_timestamp] + [f"{v:.10g}" for v in vec]
            )


def cmd_predict(args) -> int:
    from .dataflow import load_csv, write_csv, FlightTrack
    from .model import load_checkpoint

    model, _, _, _ = load_checkpoint(args.ckpt)
    k = model.config.k
    tracks = load_csv(args.input, min_length=1)
    callsigns = {t.callsign for t in tracks}
    if len(callsigns) != 1:
        raise DataError(f"input must hold one callsign, found {sorted(callsigns)}")
    usable = [t for t in tracks if len(t) >= k]
    if not usable:
        raise DataError(
            f"need at least {k} contiguous observations, longest fragment has "
            f"{max(len(t) for t in tracks)}"
        )
    track = max(usable, key=lambda t: t.points[-1].timestamp)
    observations = track.points[-k:]
    points = model.predict(observations, args.mode)
    write_csv(args.out, [FlightTrack(track.callsign, tuple(points))])
    print(f"wrote {len(points)} predicted points to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .baselines import kf_fit, kf_rollout
    from .config import load_run_config, run_config_from_dict
    from .metrics import mtc
    from .model import load_checkpoint

    model, _, _, _ = load_checkpoint(args.ckpt)
    cfg = run_config_from_dict({"model": model.config.to_dict()})
    cfg = _with_model_sections(cfg, model)
    windows = _test_windows(cfg, args.data)
    if len(windows) < args.windows:
        raise DataError(
            f"need at least {args.windows} test windows for latency runs, "
            f"got {len(windows)}"
        )
    windows = windows[: args.windows]
    n = model.config.n
    out = _out_dir(args.out)

    timings = {
        "direct_full": mtc(lambda w: model.predict(w.observations, "direct"), windows),
        "direct_h1": mtc(
            lambda w: model.predict(w.observations, "direct", horizons=1), windows
        ),
        "autoregressive_full": mtc(
            lambda w: model.predict(w.observations, "autoregressive"), windows
        ),
        "autoregressive_h1": mtc(
            lambda w: model.predict(w.observations, "autoregressive", horizons=1),
            windows,
        ),
        "kf": mtc(lambda w: kf_rollout(kf_fit(w.observations), n), windows),
    }
    report = {
        "windows": len(windows),
        "horizons": n,
        "mtc_ms": timings,
        "ratios": {
            "direct_full_over_h1": timings["direct_full"] / timings["direct_h1"],
            "autoregressive_full_over_h1": timings["autoregressive_full"]
            / timings["autoregressive_h1"],
            "autoregressive_over_direct": timings["autoregressive_full"]
            / timings["direct_full"],
        },
    }
    with open(out / "bench.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["predictor", "mtc_ms"])
        for name, ms in timings.items():
            writer.writerow([name, f"{ms:.6f}"])
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajcast",
        description="Gray-code trajectory forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override all seeds")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="single-threaded deterministic mode",
        )

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="validate a dataset and write its manifest")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric tables for a trained checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-windows", type=int, default=None)
    p.add_argument(
        "--instantaneous",
        action="store_true",
        help="also emit per-horizon-only (non-cumulative) tables",
    )
    p.add_argument("--dump-embeddings", help="CSV path for trajectory embeddings")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="forecast from one observation window")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="CSV with >= k points, one callsign")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--mode", choices=("direct", "autoregressive"), default="direct")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="prediction latency report")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--windows", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--deterministic" in argv:
        _set_single_thread_env()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # map failure classes onto distinct exit codes
        code = _classify(exc)
        print(f"error: {exc}", file=sys.stderr)
        if code == 1:
            logger.exception("unexpected failure")
        return code


if __name__ == "__main__":
    sys.exit(main())
