"""Metrics CSV reading and a dependency-free SVG line chart."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .trainer import CSV_VERSION


class MetricsFormatError(ValueError):
    pass


@dataclass
class MetricsTable:
    path: str
    columns: list[str]
    data: np.ndarray        # (rows, columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise MetricsFormatError(f"{self.path}: no column {name!r}")
        return self.data[:, self.columns.index(name)]


def read_metrics_csv(path) -> MetricsTable:
    path = str(path)
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MetricsFormatError(f"{path}: empty file")
    n = 0
    if lines[0].startswith("#"):
        version = lines[0][1:].strip()
        if version != CSV_VERSION:
            raise MetricsFormatError(f"{path}:1: unsupported schema {version!r}")
        n = 1
    if n >= len(lines) or not lines[n].strip():
        raise MetricsFormatError(f"{path}:{n + 1}: missing header line")
    columns = lines[n].split(",")
    if "round" not in columns or "gap_raw" not in columns:
        raise MetricsFormatError(f"{path}:{n + 1}: header lacks round/gap_raw columns")
    rows = []
    for lineno, line in enumerate(lines[n + 1:], start=n + 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise MetricsFormatError(
                f"{path}:{lineno}: expected {len(columns)} fields, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise MetricsFormatError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise MetricsFormatError(f"{path}: no data rows")
    data = np.array(rows)
    if np.any(np.diff(data[:, columns.index("round")]) <= 0):
        raise MetricsFormatError(f"{path}: rounds are not strictly increasing")
    return MetricsTable(path, columns, data)


def aggregate(tables: list[MetricsTable], column: str = "gap_raw"):
    """Rounds common to every table with the mean and population std across runs."""
    common = tables[0].column("round")
    for t in tables[1:]:
        common = np.intersect1d(common, t.column("round"))
    if common.size == 0:
        raise MetricsFormatError("input CSVs share no recorded rounds")
    stack = []
    for t in tables:
        idx = np.searchsorted(t.column("round"), common)
        stack.append(t.column(column)[idx])
    stack = np.array(stack)
    return common, stack.mean(axis=0), stack.std(axis=0)


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def gap_chart_svg(rounds, mean, std=None, log_x: bool = True, title: str = "CCE gap",
                  ylabel: str = "gap", width: int = 640, height: int = 400) -> str:
    """Mean line with an optional +-1 std band; byte-deterministic output."""
    rounds = np.asarray(rounds, dtype=float)
    mean = np.asarray(mean, dtype=float)
    left, right, top, bottom = 70, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom

    xs = np.log10(rounds) if log_x else rounds
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    lo_band = mean - std if std is not None else mean
    hi_band = mean + std if std is not None else mean
    y_lo = min(0.0, float(lo_band.min()))
    y_hi = float(hi_band.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
    ]
    # axes and ticks
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    if log_x:
        xt = [float(k) for k in range(math.ceil(x_lo), math.floor(x_hi) + 1)] or [x_lo]
        labels = [f"1e{int(k)}" if k == int(k) else f"{10 ** k:.0f}" for k in xt]
    else:
        xt = _ticks(x_lo, x_hi)
        labels = [f"{k:g}" for k in xt]
    for k, lab in zip(xt, labels):
        x = px(k)
        out.append(f'<line x1="{_fmt(x)}" y1="{top + ph}" x2="{_fmt(x)}" y2="{top + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{top + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{lab}</text>')
    for k in _ticks(y_lo, y_hi):
        y = py(k)
        out.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{k:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">round{" (log scale)" if log_x else ""}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')

    if std is not None:
        upper = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, hi_band))
        lower = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs[::-1], lo_band[::-1]))
        out.append(f'<polygon points="{upper} {lower}" fill="#1f77b4" fill-opacity="0.25" '
                   f'stroke="none"/>')
    line = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, mean))
    out.append(f'<polyline points="{line}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csvs(paths, log_x: bool = True, title: str | None = None) -> str:
    if not paths:
        raise MetricsFormatError("need at least one CSV")
    tables = [read_metrics_csv(p) for p in paths]
    rounds, mean, std = aggregate(tables)
    if title is None:
        title = f"CCE gap, mean over {len(tables)} run{'s' if len(tables) > 1 else ''}"
    return gap_chart_svg(rounds, mean, std if len(tables) > 1 else None, log_x=log_x,
                         title=title)
