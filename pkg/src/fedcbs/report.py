"""Metric export: per-round CSV, summary JSON and a self-contained SVG chart."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

CSV_COLUMNS = ("round", "selected_ids", "qcid", "train_loss", "test_accuracy", "learning_rate")
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def metrics_csv(metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for m in metrics:
        writer.writerow([m.round, " ".join(str(i) for i in m.selected), repr(m.qcid),
                         repr(m.train_loss), repr(m.test_accuracy), repr(m.learning_rate)])
    return buf.getvalue()


def write_metrics_csv(path, metrics) -> Path:
    return atomic_write(path, metrics_csv(metrics))


def mean_std(values) -> dict:
    """Mean and population std of the non-missing values (``None`` if all missing)."""
    present = [v for v in values if v is not None]
    if not present:
        return {"mean": None, "std": None, "n": 0, "missing": len(values)}
    arr = np.asarray(present, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(present),
            "missing": len(values) - len(present)}


def aggregate_summaries(summaries: list) -> dict:
    """Across-seed statistics of the per-seed summaries."""
    return {
        "seeds": len(summaries),
        "best_accuracy": mean_std([s["best_accuracy"] for s in summaries]),
        "rounds_to_target": mean_std([s["rounds_to_target"] for s in summaries]),
        "mean_qcid": mean_std([s["mean_qcid"] for s in summaries]),
        "final_accuracy": mean_std([s["final_accuracy"] for s in summaries]),
    }


def write_json(path, payload) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def svg_line_chart(series: dict, title: str = "", x_label: str = "round",
                   y_label: str = "test accuracy", width: int = 640, height: int = 400) -> str:
    """Line chart of ``{label: (xs, ys)}`` as a standalone SVG document."""
    left, right, top, bottom = 60, 140, 30, 45
    pw, ph = width - left - right, height - top - bottom
    xs_all = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.array([0.0, 1.0])
    ys_all = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.array([0.0, 1.0])
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = min(0.0, float(ys_all.min())), max(float(ys_all.max()), 1e-9)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for t in np.linspace(y0, y1, 6):
        out.append(f'<line x1="{left - 4}" y1="{sy(t):.1f}" x2="{left}" y2="{sy(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.2f}</text>')
    for t in np.linspace(x0, x1, 6):
        out.append(f'<line x1="{sx(t):.1f}" y1="{top + ph}" x2="{sx(t):.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{t:.0f}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(y_label)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(float(x)):.1f},{sy(float(y)):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                   f'<title>{escape(str(label))}</title></polyline>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series: dict, title: str = "") -> Path:
    return atomic_write(path, svg_line_chart(series, title=title))


def format_table(rows: list, columns: list) -> str:
    header = [c for c, _ in columns]
    body = [[fmt(row) for _, fmt in columns] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body)
    return "\n".join(lines)
