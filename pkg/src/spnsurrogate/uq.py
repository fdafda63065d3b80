"""MC-dropout posterior summaries and recovery metrics.

All metrics are computed on normalized coefficients (each divided by its
family gain); ``denormalize_report`` rescales for display.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .model import PARAM_NAMES
from .nn.resnet import ResNet1D

METRIC_COLUMNS = ("parameter", "bias", "rmse", "avg_std", "coverage_1sigma", "ratio", "rank")
CALIBRATION_COLUMNS = ("parameter", "nominal", "empirical")
DEFAULT_LEVELS = (0.5, 0.68, 0.9, 0.95)


@dataclass(frozen=True)
class UQConfig:
    M: int = 50
    tau_inv: float = 0.0
    levels: tuple = DEFAULT_LEVELS
    mc_dropout: bool = True

    def __post_init__(self):
        if self.M < 1:
            raise ValidationError("M must be at least 1")
        if self.tau_inv < 0:
            raise ValidationError("tau_inv must be non-negative")
        if any(not 0.0 < q < 1.0 for q in self.levels):
            raise ValidationError("calibration levels must lie in (0, 1)")


@dataclass
class PosteriorSummary:
    mean: np.ndarray     # (n, d)
    std: np.ndarray      # (n, d)
    samples: np.ndarray  # (n, M, d)


def predictive_moments(samples: np.ndarray, tau_inv: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance over the pass axis (-2).

    Variance is ``tau_inv + mean(s*s) - mean(s)**2`` evaluated on samples
    shifted by the first pass (the moment form is shift invariant; shifting
    avoids cancellation), floored at zero.
    """
    s = np.asarray(samples, dtype=np.float64)
    mean = s.mean(axis=-2)
    shifted = s - s[..., :1, :]
    second = (shifted * shifted).mean(axis=-2)
    first = shifted.mean(axis=-2)
    var = tau_inv + second - first * first
    return mean, np.maximum(var, 0.0)


def mc_dropout_predict(model: ResNet1D, x: np.ndarray, config: UQConfig = UQConfig(), seed: int = 42,
                       batch_size: int = 64) -> PosteriorSummary:
    """M stochastic passes with independent dropout masks."""
    if config.M < 1:
        raise ValidationError("M must be at least 1")
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (model.cfg.T, model.cfg.d_in):
        raise ValidationError(f"input must be (n, {model.cfg.T}, {model.cfg.d_in}), got {x.shape}")
    rng = np.random.default_rng(seed)
    mode = "mc" if config.mc_dropout else "eval"
    passes = [model.predict(x, mode, rng, batch_size=batch_size).astype(np.float64) for _ in range(config.M)]
    samples = np.stack(passes, axis=1) if passes else np.zeros((x.shape[0], 0, model.cfg.d_out))
    mean, var = predictive_moments(samples, config.tau_inv)
    return PosteriorSummary(mean, np.sqrt(var), samples)


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    names: tuple[str, ...]
    bias: np.ndarray
    rmse: np.ndarray
    avg_std: np.ndarray
    coverage: np.ndarray
    n_samples: int
    ratio: np.ndarray = field(init=False)
    rank: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ratio, self.rank = _ratio_and_rank(self.rmse, self.avg_std)

    @property
    def overall_rmse(self) -> float:
        return float(np.mean(self.rmse))

    def row(self, name: str) -> dict:
        k = self.names.index(name)
        return {"parameter": name, "bias": float(self.bias[k]), "rmse": float(self.rmse[k]),
                "avg_std": float(self.avg_std[k]), "coverage_1sigma": float(self.coverage[k]),
                "ratio": float(self.ratio[k]), "rank": int(self.rank[k])}

    def format_row(self, name: str) -> str:
        r = self.row(name)
        return f"{name}: {r['bias']:.3f}, {r['rmse']:.3f}, {r['avg_std']:.3f}, {100 * r['coverage_1sigma']:.1f}%"


def _ratio_and_rank(rmse: np.ndarray, avg_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(avg_std > 0, rmse / np.where(avg_std > 0, avg_std, 1.0), np.inf)
    order = sorted(range(len(ratio)), key=lambda k: (ratio[k], k))
    rank = np.empty(len(ratio), dtype=np.int64)
    rank[order] = np.arange(1, len(ratio) + 1)
    return ratio, rank


def compute_metrics(mean: np.ndarray, std: np.ndarray, truth: np.ndarray,
                    names: Sequence[str] = PARAM_NAMES) -> MetricsReport:
    mean, std, truth = (np.asarray(a, dtype=np.float64) for a in (mean, std, truth))
    if not (mean.shape == std.shape == truth.shape):
        raise ValidationError(f"shape mismatch: mean {mean.shape}, std {std.shape}, truth {truth.shape}")
    if mean.ndim != 2 or mean.shape[0] < 1:
        raise ValidationError("need at least one sample")
    if mean.shape[1] != len(names):
        raise ValidationError(f"{mean.shape[1]} outputs but {len(names)} parameter names")
    err = mean - truth
    return MetricsReport(
        names=tuple(names),
        bias=np.abs(mean.mean(axis=0) - truth.mean(axis=0)),
        rmse=np.sqrt(np.mean(err * err, axis=0)),
        avg_std=std.mean(axis=0),
        coverage=np.mean(np.abs(err) <= std, axis=0),
        n_samples=mean.shape[0],
    )


def normal_quantile(level: float) -> float:
    """Two-sided Gaussian half-width z with P(|Z| <= z) = level."""
    return NormalDist().inv_cdf((1.0 + level) / 2.0)


def calibration_curve(mean: np.ndarray, std: np.ndarray, truth: np.ndarray,
                      levels: Sequence[float] = DEFAULT_LEVELS,
                      names: Sequence[str] = PARAM_NAMES) -> dict[str, list[tuple[float, float]]]:
    abs_err = np.abs(np.asarray(mean, dtype=np.float64) - np.asarray(truth, dtype=np.float64))
    std = np.asarray(std, dtype=np.float64)
    curves = {}
    for k, name in enumerate(names):
        curves[name] = [(float(q), float(np.mean(abs_err[:, k] <= normal_quantile(q) * std[:, k])))
                        for q in levels]
    return curves


def rank_parameters(report: MetricsReport) -> list[dict]:
    """Rows sorted by RMSE / average std (ascending, ties by parameter index)."""
    rows = [report.row(n) for n in report.names]
    return sorted(rows, key=lambda r: r["rank"])


def denormalize_report(report: MetricsReport, gains: np.ndarray) -> MetricsReport:
    g = np.asarray(gains, dtype=np.float64)
    return replace(report, bias=report.bias * g, rmse=report.rmse * g, avg_std=report.avg_std * g)


# ---------------------------------------------------------------- files

def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_metrics_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for name in report.names:
            r = report.row(name)
            w.writerow([name, _fmt(r["bias"]), _fmt(r["rmse"]), _fmt(r["avg_std"]),
                        _fmt(r["coverage_1sigma"]), _fmt(r["ratio"]), r["rank"]])
        w.writerow(["overall", "", _fmt(report.overall_rmse), "", "", "", ""])


def read_metrics_csv(path) -> tuple[list[dict], float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    overall = [r for r in rows if r["parameter"] == "overall"]
    params = [r for r in rows if r["parameter"] != "overall"]
    out = [{"parameter": r["parameter"], **{c: float(r[c]) for c in METRIC_COLUMNS[1:6]}, "rank": int(r["rank"])}
           for r in params]
    return out, float(overall[0]["rmse"]) if overall else float("nan")


def write_calibration_csv(path, curves: dict[str, list[tuple[float, float]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_COLUMNS)
        for name, pts in curves.items():
            for nominal, empirical in pts:
                w.writerow([name, repr(nominal), repr(empirical)])


def read_calibration_csv(path) -> dict[str, list[tuple[float, float]]]:
    curves: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            curves.setdefault(r["parameter"], []).append((float(r["nominal"]), float(r["empirical"])))
    return curves


def write_posterior_samples(path, samples: np.ndarray) -> None:
    """(n, M, d) float32 little-endian, sample-major."""
    Path(path).write_bytes(np.ascontiguousarray(samples, dtype="<f4").tobytes())


def read_posterior_samples(path, M: int, d: int = len(PARAM_NAMES)) -> np.ndarray:
    flat = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if flat.size % (M * d):
        raise ValidationError(f"posterior sample file size is not a multiple of {M} x {d} floats")
    return flat.reshape(-1, M, d)
