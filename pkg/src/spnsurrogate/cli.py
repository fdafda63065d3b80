"""Command-line pipeline: covariates -> generate -> train -> evaluate -> report, plus infer.

Every command reads one JSON run config (``--config``); ``--seed``,
``--workers`` and repeated ``--set section.key=value`` override it. Each
output directory receives ``run_config.json`` (the resolved config, seed
included) and is guarded by a lock file while the command runs.

Exit codes: 0 success, 2 input or validation error, 3 too many generation
failures, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as _dt
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .covariates import (compute_basis, read_covariate_cache, read_weather_csv, preprocess_daily,
                         synthetic_covariates, write_covariate_cache)
from .dataset import generate_dataset, load_dataset, save_dataset
from .errors import GenerationError, NumericError, SPNError, ValidationError
from .model import PARAM_NAMES
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.train import train, write_history
from .report import read_predictions_csv, write_predictions_csv, write_report
from .uq import (calibration_curve, compute_metrics, denormalize_report, mc_dropout_predict, write_calibration_csv,
                 write_metrics_csv, write_posterior_samples)

log = logging.getLogger("spnsurrogate")

EXIT_OK, EXIT_INPUT, EXIT_GENERATION, EXIT_NUMERIC = 0, 2, 3, 4
LOCK_NAME = ".spnsurrogate.lock"
CONFIG_COPY = "run_config.json"
CHECKPOINT_NAME = "model.ckpt"


@contextlib.contextmanager
def output_dir(path: Path, cfg: RunConfig):
    """Create ``path``, hold its lock file, and drop the resolved config into it."""
    path.mkdir(parents=True, exist_ok=True)
    lock = path / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(f"{path} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        cfg.dump(path / CONFIG_COPY)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _require(cfg: RunConfig, key: str) -> Path:
    p = cfg.path(key)
    if p is None:
        raise ValidationError(f"paths.{key} is not set")
    return p


# ---------------------------------------------------------------- commands

def cmd_covariates(cfg: RunConfig, args) -> int:
    cov = cfg.covariates
    T = int(cov["T"])
    if cov.get("synthetic", True) and cfg.path("weather_csv") is None:
        series = synthetic_covariates(cfg.seed, T=T, weather=cfg.weather())
    else:
        src = _require(cfg, "weather_csv")
        if not src.exists():
            raise ValidationError(f"weather CSV {src} does not exist")
        start = _dt.date.fromisoformat(cov["start"]) if cov.get("start") else None
        by_patch = preprocess_daily(read_weather_csv(src), T, start, cov.get("patches"), int(cov.get("window", 7)))
        series = [by_patch[k] for k in by_patch]
    params = cfg.model_config().basis
    with output_dir(_require(cfg, "covariates_dir"), cfg) as out:
        active = []
        for s in series:
            b = compute_basis(s, params)
            write_covariate_cache(out, s, b)
            active.append(float(np.mean(b.Bb > 0)))
    print(f"covariates: {T} days, {len(series)} patches, fraction of days with Bb>0: "
          + ", ".join(f"patch {s.patch} {a:.3f}" for s, a in zip(series, active)))
    return EXIT_OK


def _load_basis(cfg: RunConfig):
    directory = _require(cfg, "covariates_dir")
    files = sorted(directory.glob("covariates_patch*.csv"))
    if not files:
        raise ValidationError(f"no covariate cache in {directory}; run 'covariates' first")
    return [read_covariate_cache(f)[1] for f in files]


def cmd_generate(cfg: RunConfig, args) -> int:
    ds_cfg = cfg.dataset
    basis = _load_basis(cfg)
    if len(basis) != 2:
        raise ValidationError(f"the two-patch model needs 2 covariate series, found {len(basis)}")
    t0 = time.perf_counter()
    ds = generate_dataset(int(ds_cfg["n"]), cfg.model_config(), basis, cfg.dropout_spec(), cfg.seed,
                          int(ds_cfg["T"]), int(ds_cfg["runs_per_sample"]), tuple(ds_cfg["fractions"]),
                          cfg.workers, float(ds_cfg["max_failure_rate"]))
    with output_dir(_require(cfg, "dataset_dir"), cfg) as out:
        save_dataset(ds, out)
    failures = len(ds.manifest["failures"])
    log.info("generated %d records in %.1f s (%d failed samples)", len(ds), time.perf_counter() - t0, failures)
    print(f"dataset: {len(ds)} records, {failures} failed samples, written to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = load_dataset(_require(cfg, "dataset_dir"))
    Xtr, ytr = ds.split("train")
    Xv, yv = ds.split("val")
    if len(Xtr) == 0 or len(Xv) == 0:
        raise ValidationError("dataset needs non-empty train and val splits")
    m = ds.manifest
    res_cfg = cfg.resnet_config(m["d_in"], m["d_out"], m["T"])
    t0 = time.perf_counter()
    result = train(Xtr, ytr, Xv, yv, res_cfg, cfg.train_config(),
                   progress=lambda r: log.info("epoch %(epoch)d train %(train_loss).6f val %(val_loss).6f", r))
    extra = {
        "seed": cfg.seed,
        "best_epoch": result.best_epoch,
        "places": m["places"],
        "feature_scale": m["feature_scale"],
        "param_names": m["param_names"],
        "param_gains": m["param_gains"],
        "dataset_manifest_sha256": m.get("manifest_sha256"),
    }
    with output_dir(_require(cfg, "train_dir"), cfg) as out:
        save_checkpoint(out / CHECKPOINT_NAME, result.model, extra)
        write_history(out / "history.csv", result.history)
    log.info("trained in %.1f s", time.perf_counter() - t0)
    best = result.history[result.best_epoch - 1]["val_loss"] if result.best_epoch else float("nan")
    print(f"train: {len(result.history)} epochs, best epoch {result.best_epoch}, best val loss {best:.6f}")
    return EXIT_OK


def read_trajectory_csv(path, places, T: int) -> np.ndarray:
    """Read a (T x places) trajectory; an optional ``day`` column is ignored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [p for p in places if p not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"trajectory CSV is missing column(s): {', '.join(missing)}")
        rows = []
        for row_no, r in enumerate(reader, start=2):
            try:
                rows.append([float(r[p]) for p in places])
            except (TypeError, ValueError):
                raise ValidationError(f"trajectory CSV row {row_no}: non-numeric value") from None
    x = np.array(rows, dtype=np.float64).reshape(-1, len(places))
    if x.shape[0] != T:
        raise ValidationError(f"trajectory has {x.shape[0]} rows, the checkpoint expects {T}")
    return x


def cmd_infer(cfg: RunConfig, args) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else _require(cfg, "train_dir") / CHECKPOINT_NAME
    model, extra = load_checkpoint(ckpt)
    places = extra["places"]
    x = read_trajectory_csv(args.input, places, model.cfg.T)
    if args.units == "counts":
        x = x / np.asarray(extra["feature_scale"])
    uq = cfg.uq_config()
    post = mc_dropout_predict(model, x[None], uq, seed=cfg.seed)
    gains = np.asarray(extra["param_gains"])
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(f"# M={uq.M}\n# tau_inv={uq.tau_inv!r}\n# mc_dropout={str(uq.mc_dropout).lower()}\n")
        fh.write(f"# seed={cfg.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("parameter", "mean_norm", "std_norm", "mean", "std"))
        for k, name in enumerate(extra["param_names"]):
            mu, sd = float(post.mean[0, k]), float(post.std[0, k])
            w.writerow([name, repr(mu), repr(sd), repr(float(mu * gains[k])), repr(float(sd * gains[k]))])
    print(f"infer: posterior summary written to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ds = load_dataset(_require(cfg, "dataset_dir"))
    X, y = ds.split("test")
    if len(X) == 0:
        raise ValidationError("test split is empty")
    model, extra = load_checkpoint(_require(cfg, "train_dir") / CHECKPOINT_NAME)
    uq = cfg.uq_config()
    post = mc_dropout_predict(model, X, uq, seed=cfg.seed)
    names = list(ds.manifest["param_names"])
    report = compute_metrics(post.mean, post.std, y, names)
    curves = calibration_curve(post.mean, post.std, y, uq.levels, names)
    ids = [ds.manifest["record_ids"][i] for i in ds.indices("test")]
    with output_dir(_require(cfg, "eval_dir"), cfg) as out:
        write_metrics_csv(out / "metrics.csv", report)
        write_calibration_csv(out / "calibration.csv", curves)
        write_posterior_samples(out / "posterior_samples.bin", post.samples)
        write_predictions_csv(out / "predictions.csv", names, y, post.mean, post.std, ids)
    for name in names:
        print("  " + report.format_row(name))
    print(f"overall RMSE {report.overall_rmse:.6f} on {len(X)} test samples (baseline 0.2887)")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    src = _require(cfg, "eval_dir")
    pred = src / "predictions.csv"
    if not pred.exists():
        raise ValidationError(f"{pred} not found; run 'evaluate' first")
    names, truth, mean, std = read_predictions_csv(pred)
    uq = cfg.uq_config()
    report = compute_metrics(mean, std, truth, names)
    curves = calibration_curve(mean, std, truth, uq.levels, names)
    with output_dir(_require(cfg, "report_dir"), cfg) as out:
        written = write_report(out, names, truth, mean, std, curves, report)
        write_metrics_csv(out / "metrics.csv", report)
        write_calibration_csv(out / "calibration.csv", curves)
        if len(names) == len(PARAM_NAMES):
            gains = cfg.model_config().bounds.gains()
            write_metrics_csv(out / "metrics_denormalized.csv", denormalize_report(report, gains))
    print(f"report: {len(written)} figures and tables written to {out}")
    return EXIT_OK


COMMANDS = {
    "covariates": (cmd_covariates, "build per-patch covariate and basis caches"),
    "generate": (cmd_generate, "simulate the training dataset"),
    "train": (cmd_train, "train the surrogate network"),
    "infer": (cmd_infer, "posterior summary for one trajectory CSV"),
    "evaluate": (cmd_evaluate, "metrics and calibration on the test split"),
    "report": (cmd_report, "SVG figures and tables from an evaluation"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--workers", type=int, help="worker processes for generation")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a scalar config field (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="spnsurrogate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "infer":
            p.add_argument("--input", required=True, help="trajectory CSV, one column per place")
            p.add_argument("--output", default="posterior.csv")
            p.add_argument("--checkpoint", help="defaults to <train_dir>/model.ckpt")
            p.add_argument("--units", choices=("counts", "normalized"), default="counts")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command][0](cfg, args)
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SPNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
