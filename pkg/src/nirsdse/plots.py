"""Plot-ready series files and self-contained SVG line charts for the metric table."""
from __future__ import annotations

import math
from pathlib import Path

from .analysis import IncompleteGridError, MetricRow
from .tally import SCHEMA_VERSION

__all__ = ["FIGURES", "check_complete", "emit_plot_data", "figure_series", "render_svg"]

# kind -> (y field, y error field, axis label, log scale)
FIGURES = {
    "fig2": ("penetration_fraction", "pf_se", "photons reaching depth / input photons", True),
    "fig3": ("sensitivity_pct", "sens_se", "reaching depth / detected (%)", False),
    "fig4": ("min_input_power_w", None, "minimum input power (W)", True),
}

_PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
_DASHES = ("", "6,3", "2,2", "8,3,2,3", "1,3", "10,4", "4,4", "3,1")


def check_complete(rows: list[MetricRow]) -> None:
    """Every (wavelength, depth, detector) combination present exactly once."""
    ws = sorted({r.wavelength_nm for r in rows})
    ds = sorted({r.sal_depth_mm for r in rows})
    xs = sorted({r.detector_mm for r in rows})
    have = {(r.wavelength_nm, r.sal_depth_mm, r.detector_mm) for r in rows}
    if not rows:
        raise IncompleteGridError([])
    missing = [(w, d) for w in ws for d in ds if any((w, d, x) not in have for x in xs)]
    if missing:
        raise IncompleteGridError(missing)


def _power_se(r: MetricRow):
    if r.min_input_power_w is None or not r.transmission_ratio:
        return None
    return r.min_input_power_w * r.ratio_se / r.transmission_ratio


def figure_series(rows: list[MetricRow], kind: str) -> dict:
    """Map series key -> list of (x, y, y_err); undefined y stays None."""
    yname, ename, _, _ = FIGURES[kind]
    series: dict = {}
    for r in sorted(rows, key=lambda r: (r.wavelength_nm, r.sal_depth_mm, r.detector_mm)):
        if kind == "fig4":
            key = (r.wavelength_nm,)
            if r.sal_depth_mm != min(x.sal_depth_mm for x in rows):
                continue
            err = _power_se(r)
        else:
            key = (r.wavelength_nm, r.sal_depth_mm)
            err = getattr(r, ename)
        y = getattr(r, yname)
        if y is None:
            err = None
        series.setdefault(key, []).append((r.detector_mm, y, err))
    return series


def _series_name(kind: str, key: tuple) -> str:
    if len(key) == 1:
        return f"{kind}_{key[0]:g}nm"
    return f"{kind}_{key[0]:g}nm_{key[1]:g}mm"


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def emit_plot_data(rows: list[MetricRow], kind: str, out_dir) -> list[Path]:
    """Write one CSV per series plus ``<kind>.svg``; returns the written paths."""
    if kind not in FIGURES:
        raise ValueError(f"unknown figure kind {kind!r}")
    check_complete(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = figure_series(rows, kind)
    written = []
    for key, points in series.items():
        path = out / f"{_series_name(kind, key)}.csv"
        lines = [f"# schema_version: {SCHEMA_VERSION}", "x_detector_mm,y,y_err"]
        lines += [f"{_num(x)},{_num(y)},{_num(e)}" for x, y, e in points]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    svg = out / f"{kind}.svg"
    svg.write_text(render_svg(series, kind), encoding="utf-8")
    written.append(svg)
    return written


def _ticks_log(lo, hi):
    return [10.0 ** e for e in range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)]


def _ticks_lin(lo, hi, n=5):
    step = (hi - lo) / n if hi > lo else 1.0
    return [lo + i * step for i in range(n + 1)]


def render_svg(series: dict, kind: str, width: int = 900, height: int = 560) -> str:
    """Line chart of every series; undefined or non-plottable points leave gaps."""
    _, _, ylabel, log_y = FIGURES[kind]
    left, right, top, bottom = 90, 210, 30, 60
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _, _ in pts]
    ys = [y for pts in series.values() for _, y, _ in pts if y is not None and (y > 0 or not log_y)]
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if ys:
        y_lo, y_hi = min(ys), max(ys)
    else:
        y_lo, y_hi = (1e-12, 1.0) if log_y else (0.0, 1.0)
    if log_y:
        y_lo, y_hi = 10.0 ** math.floor(math.log10(y_lo)), 10.0 ** math.ceil(math.log10(y_hi))
        if y_hi == y_lo:
            y_hi *= 10.0
    else:
        y_lo = min(0.0, y_lo)
        y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        if log_y:
            f = (math.log10(y) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        else:
            f = (y - y_lo) / (y_hi - y_lo)
        return top + ph - f * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in (_ticks_log(y_lo, y_hi) if log_y else _ticks_lin(y_lo, y_hi)):
        if not y_lo <= t <= y_hi:
            continue
        y = py(t)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    for t in sorted(set(xs)):
        x = px(t)
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 15}" text-anchor="middle">'
               f'source-detector distance (mm)</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.2f})">{ylabel}</text>')
    wavelengths = sorted({k[0] for k in series})
    depths = sorted({k[1] for k in series if len(k) > 1})
    for key, points in sorted(series.items()):
        colour = _PALETTE[wavelengths.index(key[0]) % len(_PALETTE)]
        dash = _DASHES[depths.index(key[1]) % len(_DASHES)] if len(key) > 1 else ""
        style = f' stroke-dasharray="{dash}"' if dash else ""
        run = []
        for x, y, _ in points + [(None, None, None)]:
            if y is not None and (y > 0 or not log_y):
                run.append(f"{px(x):.2f},{py(y):.2f}")
                continue
            if len(run) > 1:
                out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2"{style} '
                           f'points="{" ".join(run)}"/>')
            elif run:
                out.append(f'<circle cx="{run[0].split(",")[0]}" cy="{run[0].split(",")[1]}" r="1.5" '
                           f'fill="{colour}"/>')
            run = []
    ly = top
    for i, w in enumerate(wavelengths):
        colour = _PALETTE[i % len(_PALETTE)]
        out.append(f'<line x1="{left + pw + 15}" y1="{ly + 8}" x2="{left + pw + 40}" y2="{ly + 8}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 46}" y="{ly + 12}">{w:g} nm</text>')
        ly += 16
    ly += 8
    for i, d in enumerate(depths):
        dash = _DASHES[i % len(_DASHES)]
        style = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{left + pw + 15}" y1="{ly + 8}" x2="{left + pw + 40}" y2="{ly + 8}" '
                   f'stroke="black"{style}/>')
        out.append(f'<text x="{left + pw + 46}" y="{ly + 12}">depth {d:g} mm</text>')
        ly += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"
