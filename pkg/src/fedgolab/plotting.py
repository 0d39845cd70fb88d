"""Round-by-round metric curves as standalone SVG."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .numerics import ConfigurationError

METRICS = ("server_acc", "ensemble_acc", "ensemble_loss", "distill_kl", "wall_ms")
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 20, 50


def series_label(path: Path) -> str:
    """Weighting method from a sibling summary.json, else the run directory name."""
    summary = path.parent / "summary.json"
    if summary.is_file():
        try:
            return str(json.loads(summary.read_text())["weighting"])
        except (KeyError, ValueError):
            pass
    return path.parent.name if path.name == "metrics.csv" else path.stem


def read_metrics(path, required=("seed", "round")) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"{path}: missing columns {sorted(missing)}")
        try:
            return [{k: (v if k == "method" else float(v)) for k, v in r.items()} for r in reader]
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path}: unparsable row ({exc})") from None


def collect_series(paths, metric: str, per_seed: bool = False) -> dict[str, list[tuple[float, float]]]:
    """label -> [(round, value)], averaged over seeds unless ``per_seed``.

    Rows carrying a ``method`` column are grouped by it; otherwise each file is one series.
    """
    if metric not in METRICS:
        raise ConfigurationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    out = {}
    for p in paths:
        p = Path(p)
        label = series_label(p)
        groups = defaultdict(lambda: defaultdict(list))
        for r in read_metrics(p, ("seed", "round", metric)):
            base = r.get("method") or label
            key = f"{base} seed {int(r['seed'])}" if per_seed else base
            groups[key][r["round"]].append(r[metric])
        for key, by_round in groups.items():
            name, n = key, 2
            while name in out:
                name, n = f"{key} ({n})", n + 1
            out[name] = [(rnd, float(np.mean(v))) for rnd, v in sorted(by_round.items())]
    if not any(out.values()):
        raise ConfigurationError("no metric rows to plot")
    return out


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def render_svg(series: dict, metric: str) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.05, y1 + 0.05
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        parts.append(f'<text x="{sx(xv):.2f}" y="{TOP + ph + 16}" font-size="11" text-anchor="middle">{_fmt(xv)}</text>')
        parts.append(f'<text x="{LEFT - 6}" y="{sy(yv) + 4:.2f}" font-size="11" text-anchor="end">{_fmt(yv)}</text>')
    parts.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 10}" font-size="13" text-anchor="middle">round</text>')
    parts.append(f'<text x="16" y="{TOP + ph / 2:.1f}" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">{escape(metric)}</text>')
    for i, (label, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2">'
                     f"<title>{escape(label)}</title></polyline>")
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = TOP + 14 + 18 * i
        lx = LEFT + pw + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly}" font-size="12" data-series={quoteattr(label)}>{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot(paths, out, metric: str = "server_acc", per_seed: bool = False) -> dict:
    series = collect_series(paths, metric, per_seed)
    Path(out).write_text(render_svg(series, metric), encoding="utf-8")
    return series
