"""Deterministic SVG charts from result and training-log CSVs.

SVGs are assembled by hand with fixed number formatting so identical inputs
produce identical bytes. Result CSVs yield one grouped line chart per metric
(x = scenario, one series per algorithm); training logs yield curves over
episodes.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import PlotError

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _read_csv(csv_path: str | Path) -> tuple[list[str], list[dict]]:
    path = Path(csv_path)
    if not path.exists():
        raise PlotError(f"CSV not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotError(f"{path}: empty CSV")
        rows = []
        for i, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise PlotError(f"{path}: malformed CSV at line {i}")
            rows.append(row)
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return list(reader.fieldnames), rows


def _axis_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _line_chart(
    series: dict[str, list[tuple[float, float]]],
    title: str,
    x_label: str,
    y_label: str,
    x_ticklabels: list[str] | None = None,
) -> str:
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    px = lambda x: _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)
    py = lambda y: _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 12}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">{x_label}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {(_MT + _H - _MB) / 2})">'
        f"{y_label}</text>",
    ]
    for tick in _axis_ticks(y_lo, y_hi):
        y = py(tick)
        parts.append(
            f'<line x1="{_ML - 4}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" stroke="black"/>'
            f'<text x="{_ML - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-size="10" '
            f'font-family="sans-serif">{_fmt(tick)}</text>'
        )
    if x_ticklabels is not None:
        for i, label in enumerate(x_ticklabels):
            x = px(float(i))
            parts.append(
                f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 4}" '
                f'stroke="black"/>'
                f'<text x="{_fmt(x)}" y="{_H - _MB + 16}" text-anchor="middle" font-size="10" '
                f'font-family="sans-serif">{label}</text>'
            )
    else:
        for tick in _axis_ticks(x_lo, x_hi):
            x = px(tick)
            parts.append(
                f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 4}" '
                f'stroke="black"/>'
                f'<text x="{_fmt(x)}" y="{_H - _MB + 16}" text-anchor="middle" font-size="10" '
                f'font-family="sans-serif">{_fmt(tick)}</text>'
            )
    for idx, name in enumerate(sorted(series)):
        pts = series[name]
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = _MT + 14 * idx
        parts.append(
            f'<line x1="{_W - _MR - 110}" y1="{ly}" x2="{_W - _MR - 90}" y2="{ly}" '
            f'stroke="{color}" stroke-width="2"/>'
            f'<text x="{_W - _MR - 85}" y="{ly + 4}" font-size="11" '
            f'font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plots(csv_path: str | Path, out_dir: str | Path) -> list[Path]:
    """Render charts for a results CSV or a training-log CSV; returns paths."""
    fields, rows = _read_csv(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if "algorithm" in fields and "total_delay" in fields:
        metrics = ["total_delay", "cpu_used", "gpu_used", "mem_used"]
        scenario_ids = sorted({r["scenario_id"] for r in rows})
        x_of = {sid: float(i) for i, sid in enumerate(scenario_ids)}
        for metric in metrics:
            series: dict[str, list[tuple[float, float]]] = {}
            for sid in scenario_ids:
                for algo in sorted({r["algorithm"] for r in rows}):
                    vals = [
                        float(r[metric])
                        for r in rows
                        if r["scenario_id"] == sid and r["algorithm"] == algo
                        and r["status"] != "failed" and r[metric] not in ("", "None")
                    ]
                    if vals:
                        series.setdefault(algo, []).append((x_of[sid], sum(vals) / len(vals)))
            if not series:
                continue
            path = out / f"{metric}.svg"
            path.write_text(
                _line_chart(series, metric, "scenario", metric, x_ticklabels=scenario_ids)
            )
            written.append(path)
    elif "episode" in fields:
        curves = [f for f in ["total_delay", "episode_return", "A_loss", "C_loss"] if f in fields]
        for metric in curves:
            pts = [
                (float(r["episode"]), float(r[metric]))
                for r in rows
                if r[metric] not in ("", "None")
            ]
            if not pts:
                continue
            path = out / f"{metric}.svg"
            path.write_text(_line_chart({metric: pts}, metric, "episode", metric))
            written.append(path)
    else:
        raise PlotError(f"{csv_path}: unrecognized CSV schema: {fields}")
    if not written:
        raise PlotError(f"{csv_path}: no plottable data")
    return written
