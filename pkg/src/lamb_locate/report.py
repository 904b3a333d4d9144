"""CSV and SVG reports: per-impact errors, an error-coloured scatter of
true vs. estimated positions, and per-impact prediction traces."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Optional
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError, DataError
from .evaluate import ErrorSummary, write_summary_csv, summary_row

COLOR_CAP = 0.025  # metres; larger errors share the top colour

# viridis anchors at 0, .25, .5, .75, 1
_ANCHORS = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=float)


def error_color(e: float, cap: float = COLOR_CAP) -> str:
    x = min(max(float(e) / cap, 0.0), 1.0)
    pos = x * (len(_ANCHORS) - 1)
    i = min(int(pos), len(_ANCHORS) - 2)
    rgb = _ANCHORS[i] + (pos - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def write_errors_csv(path, summary: ErrorSummary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "true_x_m", "true_y_m", "pred_x_m", "pred_y_m", "e_m"])
        for k, e in enumerate(summary.errors):
            t, p = summary.targets[k], summary.estimates[k]
            ident = summary.ids[k] if k < len(summary.ids) else str(k)
            w.writerow([ident] + [f"{v:.9g}" for v in (t[0], t[1], p[0], p[1], e)])


def scatter_svg(summary: ErrorSummary, plate_size=(0.904, 0.902), cap: float = COLOR_CAP,
                px: float = 600.0) -> str:
    W, H = plate_size
    s = px / max(W, H)
    pad = 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W * s + 2 * pad:.0f}" '
           f'height="{H * s + 2 * pad + 30:.0f}">',
           f'<rect x="{pad}" y="{pad}" width="{W * s:.2f}" height="{H * s:.2f}" fill="none" stroke="black"/>']
    for t, p, e in zip(summary.targets, summary.estimates, summary.errors):
        col = error_color(e, cap)
        tx, ty = pad + t[0] * s, pad + t[1] * s
        qx, qy = pad + p[0] * s, pad + p[1] * s
        out.append(f'<circle class="true" cx="{tx:.2f}" cy="{ty:.2f}" r="4" fill="{col}" fill-opacity="0.4"/>')
        out.append(f'<path class="pred" d="M{qx - 3:.2f},{qy - 3:.2f} L{qx + 3:.2f},{qy + 3:.2f} '
                   f'M{qx - 3:.2f},{qy + 3:.2f} L{qx + 3:.2f},{qy - 3:.2f}" stroke="{col}" stroke-width="1.5"/>')
    y = pad + H * s + 12
    for k in range(11):
        col = error_color(cap * k / 10, cap)
        out.append(f'<rect x="{pad + k * 20}" y="{y}" width="20" height="8" fill="{col}"/>')
    out.append(f'<text x="{pad + 230}" y="{y + 8}" font-size="10">0 to {cap * 1000:g} mm</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_trace(out_dir: Path, item_id: str, predictions, target, sample_rate: float) -> None:
    P = np.asarray(predictions)
    t = np.arange(P.shape[0]) / sample_rate
    with open(out_dir / f"trace_{item_id}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "pred_x_m", "pred_y_m", "true_x_m", "true_y_m"])
        for k in range(P.shape[0]):
            w.writerow([f"{t[k]:.9g}", f"{P[k, 0]:.9g}", f"{P[k, 1]:.9g}", f"{target[0]:.9g}", f"{target[1]:.9g}"])
    _write(out_dir / f"trace_{item_id}.svg", trace_svg(t, P, target, item_id))


def trace_svg(t, P, target, title: str = "", width: float = 600.0, height: float = 300.0) -> str:
    pad = 30
    lo = min(P.min(), min(target)) - 0.02
    hi = max(P.max(), max(target)) + 0.02
    tmax = t[-1] if len(t) > 1 and t[-1] > 0 else 1.0

    def xy(tt, v):
        return pad + tt / tmax * (width - 2 * pad), height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}">',
           f'<text x="{pad}" y="15" font-size="12">{escape(str(title))}</text>']
    for comp, color in ((0, "#1f77b4"), (1, "#ff7f0e")):
        pts = " ".join("{:.2f},{:.2f}".format(*xy(tt, v)) for tt, v in zip(t, P[:, comp]))
        out.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        x0, y0 = xy(0, target[comp])
        x1, _ = xy(tmax, target[comp])
        out.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" stroke="red" stroke-dasharray="4,3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(summaries, traces: Optional[Mapping] = None, out_dir=".", plate_size=(0.904, 0.902),
                sample_rate: float = 250e3) -> list:
    """Write ``errors.csv``, ``summary.csv``, ``scatter.svg`` and one
    ``trace_<id>.csv/svg`` pair per entry of ``traces``.

    ``summaries`` is an ErrorSummary or a list of them (the first one is
    drawn); ``traces`` maps impact id to ``(predictions, target)``.
    """
    if isinstance(summaries, ErrorSummary):
        summaries = [summaries]
    if not summaries or any(len(s.errors) == 0 for s in summaries):
        raise ConfigError("nothing to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    main = summaries[0]
    written = []
    write_errors_csv(out_dir / "errors.csv", main)
    write_summary_csv(out_dir / "summary.csv", [summary_row(s) for s in summaries])
    _write(out_dir / "scatter.svg", scatter_svg(main, plate_size))
    written += ["errors.csv", "summary.csv", "scatter.svg"]
    for item_id, (P, target) in (traces or {}).items():
        write_trace(out_dir, item_id, P, target, sample_rate)
        written += [f"trace_{item_id}.csv", f"trace_{item_id}.svg"]
    return [out_dir / w for w in written]
