"""Deterministic report artifacts: CSV tables, SVG line charts, JSONL logs.

Every writer here produces byte-identical output for identical inputs:
floats are rendered in their shortest round-trip form, SVG coordinates use
fixed precision, and nothing embeds timestamps.  Files are written through
an atomic replace so readers never observe a partial artifact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from xml.sax.saxutils import escape

import numpy as np

from ._util import atomic_write_text

#: Stroke colors for chart series, applied in order and recycled if needed.
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

CHART_WIDTH = 640
CHART_HEIGHT = 400
_MARGIN_LEFT = 64
_MARGIN_RIGHT = 168
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 48

METRICS_HEADER = ("technique", "horizon_min", "mae", "rmse", "mape", "n")
NEIGHBORS_HEADER = ("target", "rank", "sensor_id", "closeness",
                    "corr", "km", "mean_diff")
KWT_HEADER = ("group", "n", "mean_rank", "h_statistic", "df", "p_value")
MCT_HEADER = ("group_i", "group_j", "difference", "lower", "upper",
              "p_adjusted", "alpha", "critical", "significant")


def format_value(value):
    """Canonical text for one CSV cell.

    Floats use ``repr`` of the Python float (shortest form that round-trips),
    integers print plainly, and anything else falls back to ``str``.
    """
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """Write a CSV file with canonical cell formatting and LF line ends."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_metrics_csv(path, table):
    """Persist per-technique, per-horizon accuracy metrics.

    ``table`` maps technique name to ``{horizon_min: Metrics}``.  Rows keep
    the technique insertion order and sort horizons ascending within each.
    """
    rows = []
    for technique, by_horizon in table.items():
        for horizon in sorted(by_horizon):
            m = by_horizon[horizon]
            rows.append((technique, horizon, m.mae, m.rmse, m.mape, m.n))
    write_csv(path, METRICS_HEADER, rows)


def write_neighbors_csv(path, rankings):
    """Persist ranked neighbor attributes for each target sensor.

    ``rankings`` is an iterable of ranking results; each contributes one row
    per candidate in rank order (rank 1 is the closest match).
    """
    rows = []
    for ranked in rankings:
        for rank, cand in enumerate(ranked.ranking, start=1):
            rows.append((ranked.target, rank, cand.sensor_id,
                         ranked.closeness[rank - 1], cand.correlation,
                         cand.distance_km, cand.mean_diff))
    write_csv(path, NEIGHBORS_HEADER, rows)


def write_kwt_csv(path, labels, result):
    """Persist a rank-sum test: one row per group, test stats repeated."""
    rows = []
    for label, n, mean_rank in zip(labels, result.sizes, result.mean_ranks):
        rows.append((label, n, mean_rank, result.h, result.df,
                     result.p_value))
    write_csv(path, KWT_HEADER, rows)


def write_mct_csv(path, labels, result):
    """Persist pairwise comparisons with confidence intervals."""
    rows = []
    for pair in result.pairs:
        rows.append((labels[pair.i], labels[pair.j], pair.difference,
                     pair.lower, pair.upper, pair.p_adjusted, result.alpha,
                     result.critical, pair.p_adjusted < result.alpha))
    write_csv(path, MCT_HEADER, rows)


def _fmt(value):
    """Fixed-precision SVG coordinate."""
    return f"{value:.2f}"


def _fmt_tick(value):
    return f"{value:.6g}"


def line_chart_svg(series, *, title="", x_label="", y_label=""):
    """Render a self-contained SVG line chart as a string.

    ``series`` is a sequence of ``(label, xs, ys)`` triples; points with a
    non-finite coordinate are dropped.  The output depends only on the
    arguments, so identical inputs yield identical bytes.
    """
    cleaned = []
    for label, xs, ys in series:
        pts = [(float(x), float(y)) for x, y in zip(xs, ys)
               if math.isfinite(float(x)) and math.isfinite(float(y))]
        cleaned.append((str(label), pts))

    all_pts = [p for _, pts in cleaned for p in pts]
    if all_pts:
        x_lo = min(p[0] for p in all_pts)
        x_hi = max(p[0] for p in all_pts)
        y_lo = min(p[1] for p in all_pts)
        y_hi = max(p[1] for p in all_pts)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        pad = max(abs(y_lo) * 0.1, 0.5)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        pad = (y_hi - y_lo) * 0.05
        y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = CHART_WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = CHART_HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM

    def sx(x):
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return _MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_WIDTH}"'
        f' height="{CHART_HEIGHT}"'
        f' viewBox="0 0 {CHART_WIDTH} {CHART_HEIGHT}">',
        f'<rect width="{CHART_WIDTH}" height="{CHART_HEIGHT}"'
        f' fill="white"/>',
    ]
    text = ('<text x="{x}" y="{y}" font-family="sans-serif"'
            ' font-size="{size}" text-anchor="{anchor}"{extra}>{body}</text>')

    ticks = 5
    for i in range(ticks):
        frac = i / (ticks - 1)
        gx = _MARGIN_LEFT + frac * plot_w
        gy = _MARGIN_TOP + plot_h - frac * plot_h
        parts.append(f'<line x1="{_fmt(gx)}" y1="{_MARGIN_TOP}"'
                     f' x2="{_fmt(gx)}" y2="{_MARGIN_TOP + plot_h}"'
                     f' stroke="#dddddd"/>')
        parts.append(f'<line x1="{_MARGIN_LEFT}" y1="{_fmt(gy)}"'
                     f' x2="{_MARGIN_LEFT + plot_w}" y2="{_fmt(gy)}"'
                     f' stroke="#dddddd"/>')
        x_val = x_lo + frac * (x_hi - x_lo)
        y_val = y_lo + frac * (y_hi - y_lo)
        parts.append(text.format(
            x=_fmt(gx), y=_MARGIN_TOP + plot_h + 18, size=11,
            anchor="middle", extra="", body=escape(_fmt_tick(x_val))))
        parts.append(text.format(
            x=_MARGIN_LEFT - 8, y=_fmt(gy + 4), size=11,
            anchor="end", extra="", body=escape(_fmt_tick(y_val))))

    parts.append(f'<rect x="{_MARGIN_LEFT}" y="{_MARGIN_TOP}"'
                 f' width="{plot_w}" height="{plot_h}"'
                 f' fill="none" stroke="#888888"/>')

    legend_x = _MARGIN_LEFT + plot_w + 16
    for idx, (label, pts) in enumerate(cleaned):
        color = PALETTE[idx % len(PALETTE)]
        if pts:
            coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
            parts.append(f'<polyline points="{coords}" fill="none"'
                         f' stroke="{color}" stroke-width="2"/>')
            for x, y in pts:
                parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}"'
                             f' r="3" fill="{color}"/>')
        ly = _MARGIN_TOP + 8 + idx * 18
        parts.append(f'<line x1="{legend_x}" y1="{ly}"'
                     f' x2="{legend_x + 18}" y2="{ly}"'
                     f' stroke="{color}" stroke-width="2"/>')
        parts.append(text.format(
            x=legend_x + 24, y=ly + 4, size=12, anchor="start",
            extra="", body=escape(label)))

    if title:
        parts.append(text.format(
            x=CHART_WIDTH // 2, y=24, size=14, anchor="middle",
            extra=' font-weight="bold"', body=escape(title)))
    if x_label:
        parts.append(text.format(
            x=_MARGIN_LEFT + plot_w // 2, y=CHART_HEIGHT - 10, size=12,
            anchor="middle", extra="", body=escape(x_label)))
    if y_label:
        mid_y = _MARGIN_TOP + plot_h // 2
        parts.append(text.format(
            x=18, y=mid_y, size=12, anchor="middle",
            extra=f' transform="rotate(-90 18 {mid_y})"',
            body=escape(y_label)))

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_line_chart(path, series, *, title="", x_label="", y_label=""):
    """Write a line chart SVG atomically."""
    atomic_write_text(path, line_chart_svg(series, title=title,
                                           x_label=x_label, y_label=y_label))


def append_jsonl(path, record):
    """Append one JSON object as a single line, creating the file on
    first use.  Keys are sorted so replays of the same records match."""
    line = json.dumps(record, sort_keys=True, default=str)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
