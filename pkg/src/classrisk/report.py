"""Plain-text tables and SVG histograms rendered from a finished run."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .pipeline import load_eta_table, load_samples
from .semester import QUANTILE_LEVELS

WIDTH, HEIGHT, MARGIN = 640, 360, 48
N_BINS = 40


def histogram_svg(samples: np.ndarray, title: str) -> str:
    """Log-spaced histogram with dashed lines at the 5%, 50% and 95% quantiles."""
    positive = samples[samples > 0]
    if positive.size == 0:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">'
                f'<text x="{MARGIN}" y="{MARGIN}">{title}: all samples are zero</text></svg>\n')
    lo, hi = np.log10(positive.min()), np.log10(positive.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.logspace(lo, hi, N_BINS + 1)
    counts, _ = np.histogram(positive, edges)
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def x_of(v):
        return MARGIN + (np.log10(v) - lo) / (hi - lo) * plot_w

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'font-family="sans-serif" font-size="12">',
             f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle">{title}</text>']
    top = counts.max()
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        h = plot_h * c / top
        parts.append(f'<rect x="{x_of(a):.2f}" y="{MARGIN + plot_h - h:.2f}" '
                     f'width="{x_of(b) - x_of(a):.2f}" height="{h:.2f}" fill="#7a9cc6"/>')
    for level, q in zip(QUANTILE_LEVELS, np.quantile(samples, QUANTILE_LEVELS)):
        if q <= 0:
            continue
        colour = "#c0392b" if level == 0.5 else "#555555"
        parts.append(f'<line x1="{x_of(q):.2f}" y1="{MARGIN}" x2="{x_of(q):.2f}" '
                     f'y2="{MARGIN + plot_h}" stroke="{colour}" stroke-dasharray="5,3"/>')
        parts.append(f'<text x="{x_of(q):.2f}" y="{MARGIN - 4}" text-anchor="middle">'
                     f'{100 * q:.3g}%</text>')
    y_axis = MARGIN + plot_h
    parts.append(f'<line x1="{MARGIN}" y1="{y_axis}" x2="{MARGIN + plot_w}" y2="{y_axis}" stroke="black"/>')
    for decade in range(int(np.ceil(lo)), int(np.floor(hi)) + 1):
        x = x_of(10.0 ** decade)
        parts.append(f'<text x="{x:.2f}" y="{y_axis + 16}" text-anchor="middle">1e{decade}</text>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle">semester infection risk</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_report(out_dir) -> str:
    """Write ``report/<role>.svg`` and ``report/report.txt``; return the text."""
    out = Path(out_dir)
    dest = out / "report"
    dest.mkdir(exist_ok=True)
    samples = load_samples(out)
    lines = ["role                     q05          q50          q95"]
    for role, values in samples.items():
        q05, q50, q95 = np.quantile(values, QUANTILE_LEVELS)
        lines.append(f"{role:<22} {100 * q05:>10.4f}% {100 * q50:>10.4f}% {100 * q95:>10.4f}%")
        (dest / f"{role}.svg").write_text(histogram_svg(values, role))

    table = load_eta_table(out)
    lines += ["", "mean stage-1 eta over VE pairs (per hour)", "density        student      instructor"]
    for density in dict.fromkeys(r.density for r in table.rows):
        rows = [r for r in table.rows if r.density == density]
        lines.append(f"{density:<14} {np.mean([r.eta_student for r in rows]):.6f}     "
                     f"{np.mean([r.eta_instructor for r in rows]):.6f}")

    summary = out / "summary.json"
    if summary.exists():
        doc = json.loads(summary.read_text())
        lines += ["", f"density {doc['density']}, policy {doc['seating_policy']}, "
                      f"c2 {doc['c2']}, alpha {doc['alpha_deg']} deg"]
    text = "\n".join(lines) + "\n"
    (dest / "report.txt").write_text(text)
    return text
