"""Plain SVG figures and tables for an evaluation run.

No plotting library is involved: every figure is a small hand-built SVG
document so reports render anywhere and diff cleanly.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError
from .uq import MetricsReport, rank_parameters

PREDICTION_COLUMNS = ("sample", "parameter", "truth", "mean", "std")

WIDTH, HEIGHT, MARGIN = 320, 320, 48


class _Canvas:
    """Unit-square plot area mapped onto an SVG viewport."""

    def __init__(self, title: str, xlabel: str, ylabel: str, lo: float = 0.0, hi: float = 1.0,
                 width: int = WIDTH, height: int = HEIGHT):
        self.lo, self.hi = lo, hi
        self.w, self.h = width, height
        self.parts: list[str] = []
        self.parts.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
        self.text(width / 2, 20, title, size=13, anchor="middle")
        self.text(width / 2, height - 8, xlabel, size=11, anchor="middle")
        self.parts.append(f'<text x="14" y="{height / 2}" font-size="11" text-anchor="middle" '
                          f'transform="rotate(-90 14 {height / 2})">{escape(ylabel)}</text>')
        x0, y0 = self.px(lo), self.py(lo)
        x1, y1 = self.px(hi), self.py(hi)
        self.parts.append(f'<rect class="frame" x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" '
                          f'height="{y0 - y1:.2f}" fill="none" stroke="black"/>')
        for v in np.linspace(lo, hi, 5):
            self.text(self.px(v), y0 + 14, f"{v:.2g}", size=9, anchor="middle")
            self.text(x0 - 4, self.py(v) + 3, f"{v:.2g}", size=9, anchor="end")

    def px(self, v: float) -> float:
        return MARGIN + (v - self.lo) / (self.hi - self.lo) * (self.w - 2 * MARGIN)

    def py(self, v: float) -> float:
        return self.h - MARGIN - (v - self.lo) / (self.hi - self.lo) * (self.h - 2 * MARGIN)

    def text(self, x, y, s, size=10, anchor="start"):
        self.parts.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
                          f'text-anchor="{anchor}">{escape(s)}</text>')

    def line(self, x0, y0, x1, y1, cls, stroke="black", dash=None, width=1.0):
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line class="{cls}" x1="{self.px(x0):.2f}" y1="{self.py(y0):.2f}" '
                          f'x2="{self.px(x1):.2f}" y2="{self.py(y1):.2f}" stroke="{stroke}" '
                          f'stroke-width="{width}"{extra}/>')

    def circle(self, x, y, cls, r=2.5, fill="steelblue"):
        self.parts.append(f'<circle class="{cls}" cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" '
                          f'r="{r}" fill="{fill}"/>')

    def polyline(self, pts, cls, stroke="steelblue"):
        coords = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in pts)
        self.parts.append(f'<polyline class="{cls}" points="{coords}" fill="none" stroke="{stroke}" '
                          f'stroke-width="1.5"/>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n{body}\n</svg>\n')


def calibration_svg(name: str, points: Sequence[tuple[float, float]]) -> str:
    c = _Canvas(f"Calibration: {name}", "nominal coverage", "empirical coverage")
    c.line(0, 0, 1, 1, "diagonal", stroke="gray", dash="4 3")
    pts = sorted(points)
    if pts:
        c.polyline(pts, "curve")
    for x, y in pts:
        c.circle(x, y, "level", r=3)
    return c.render()


def scatter_svg(name: str, truth: np.ndarray, mean: np.ndarray, std: np.ndarray) -> str:
    """True vs predicted with vertical +/-1 std bars, one marker per sample."""
    truth, mean, std = (np.asarray(a, dtype=np.float64) for a in (truth, mean, std))
    lo = min(0.0, float(np.min(mean - std, initial=0.0)))
    hi = max(1.0, float(np.max(mean + std, initial=1.0)))
    c = _Canvas(f"True vs predicted: {name}", "true (normalized)", "predicted (normalized)", lo, hi)
    c.line(lo, lo, hi, hi, "diagonal", stroke="gray", dash="4 3")
    for t, m, s in zip(truth, mean, std):
        c.line(t, m - s, t, m + s, "errorbar", stroke="lightsteelblue")
    for t, m in zip(truth, mean):
        c.circle(t, m, "marker")
    return c.render()


def _five_numbers(v: np.ndarray) -> np.ndarray:
    return np.quantile(np.asarray(v, dtype=np.float64), [0.0, 0.25, 0.5, 0.75, 1.0])


def distribution_svg(names: Sequence[str], truth: np.ndarray, mean: np.ndarray) -> str:
    """Side-by-side box summaries of true and predicted values per parameter."""
    row_h = 26
    width = 520
    height = 2 * MARGIN + row_h * len(names)
    parts = [f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" font-size="13" text-anchor="middle">'
             f'Distribution of true and predicted values</text>']
    x0, x1 = 130, width - 30
    sx = lambda v: x0 + v * (x1 - x0)  # noqa: E731
    for v in np.linspace(0, 1, 5):
        parts.append(f'<line class="grid" x1="{sx(v):.2f}" y1="{MARGIN - 6}" x2="{sx(v):.2f}" '
                     f'y2="{height - MARGIN + 6}" stroke="#ddd"/>')
        parts.append(f'<text x="{sx(v):.2f}" y="{height - MARGIN + 20}" font-size="9" '
                     f'text-anchor="middle">{v:.2g}</text>')
    for k, name in enumerate(names):
        y = MARGIN + k * row_h
        parts.append(f'<text x="{x0 - 8}" y="{y + row_h / 2 + 3:.2f}" font-size="10" '
                     f'text-anchor="end">{escape(name)}</text>')
        for off, col, cls in ((5, "gray", "box-true"), (14, "steelblue", "box-pred")):
            src = truth[:, k] if cls == "box-true" else mean[:, k]
            q = np.clip(_five_numbers(src), -0.5, 1.5)
            yy = y + off
            parts.append(f'<line class="{cls}-whisker" x1="{sx(q[0]):.2f}" y1="{yy + 3}" x2="{sx(q[4]):.2f}" '
                         f'y2="{yy + 3}" stroke="{col}"/>')
            parts.append(f'<rect class="{cls}" x="{sx(q[1]):.2f}" y="{yy}" width="{max(sx(q[3]) - sx(q[1]), 0.5):.2f}" '
                         f'height="6" fill="{col}" fill-opacity="0.5" stroke="{col}"/>')
            parts.append(f'<line class="{cls}-median" x1="{sx(q[2]):.2f}" y1="{yy - 1}" x2="{sx(q[2]):.2f}" '
                         f'y2="{yy + 7}" stroke="black"/>')
    legend_y = height - 10
    parts.append(f'<text x="{x0}" y="{legend_y}" font-size="9" fill="gray">upper box: true</text>')
    parts.append(f'<text x="{x0 + 110}" y="{legend_y}" font-size="9" fill="steelblue">lower box: predicted</text>')
    body = "\n".join(parts)
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n{body}\n</svg>\n')


# ---------------------------------------------------------------- prediction table

def write_predictions_csv(path, names: Sequence[str], truth: np.ndarray, mean: np.ndarray, std: np.ndarray,
                          sample_ids: Sequence[int] | None = None) -> None:
    """Long format: one row per (sample, parameter)."""
    n = truth.shape[0]
    ids = list(range(n)) if sample_ids is None else list(sample_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for i in range(n):
            for k, name in enumerate(names):
                w.writerow([ids[i], name, repr(float(truth[i, k])), repr(float(mean[i, k])), repr(float(std[i, k]))])


def read_predictions_csv(path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{path}: missing columns {missing}")
        rows = list(reader)
    names: list[str] = []
    samples: list[str] = []
    for r in rows:
        if r["parameter"] not in names:
            names.append(r["parameter"])
        if r["sample"] not in samples:
            samples.append(r["sample"])
    if len(rows) != len(names) * len(samples):
        raise ValidationError(f"{path}: expected {len(names) * len(samples)} rows, found {len(rows)}")
    out = np.zeros((3, len(samples), len(names)))
    si = {s: i for i, s in enumerate(samples)}
    ni = {n: k for k, n in enumerate(names)}
    for r in rows:
        i, k = si[r["sample"]], ni[r["parameter"]]
        out[:, i, k] = float(r["truth"]), float(r["mean"]), float(r["std"])
    return names, out[0], out[1], out[2]


def write_ranking_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rank", "parameter", "rmse", "avg_std", "ratio"))
        for r in rank_parameters(report):
            w.writerow([r["rank"], r["parameter"], repr(r["rmse"]), repr(r["avg_std"]), repr(r["ratio"])])


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def write_report(out_dir, names: Sequence[str], truth: np.ndarray, mean: np.ndarray, std: np.ndarray,
                 curves: dict[str, list[tuple[float, float]]], report: MetricsReport) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, name in enumerate(names):
        p = out / f"calibration_{_safe(name)}.svg"
        p.write_text(calibration_svg(name, curves.get(name, [])))
        written.append(p)
        p = out / f"scatter_{_safe(name)}.svg"
        p.write_text(scatter_svg(name, truth[:, k], mean[:, k], std[:, k]))
        written.append(p)
    p = out / "distribution.svg"
    p.write_text(distribution_svg(names, truth, mean))
    written.append(p)
    p = out / "ranking.csv"
    write_ranking_csv(p, report)
    written.append(p)
    return written

