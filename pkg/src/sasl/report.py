"""Coefficient profiles (CSV and a static SVG bar chart)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import ColumnProvenance, INTERACTION, SUBJECT


@dataclass(frozen=True)
class ProfileRow:
    section: str  # "global" or "subject"
    term: str
    subject: str
    feature: str
    coefficient: float


def coefficient_profile(columns, coefficients) -> list[ProfileRow]:
    """Global backbone first, then per-subject adjustments grouped by
    subject; each block sorted by descending |coefficient|."""
    rows = []
    for col, b in zip(columns, np.asarray(coefficients, dtype=float)):
        if isinstance(col, dict):
            col = ColumnProvenance.from_dict(col)
        per_subject = col.kind in (SUBJECT, INTERACTION)
        rows.append(ProfileRow("subject" if per_subject else "global", col.name,
                               col.subject_id or "", col.feature_name or "", float(b)))
    glob = sorted((r for r in rows if r.section == "global"), key=lambda r: (-abs(r.coefficient), r.term))
    subj = sorted((r for r in rows if r.section == "subject"),
                  key=lambda r: (r.subject, -abs(r.coefficient), r.term))
    return glob + subj


def write_profile_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["section", "term", "subject", "feature", "coefficient"])
        for r in rows:
            w.writerow([r.section, r.term, r.subject, r.feature, repr(r.coefficient)])


def read_profile_csv(path) -> list[ProfileRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [ProfileRow(d["section"], d["term"], d["subject"], d["feature"], float(d["coefficient"]))
                for d in csv.DictReader(fh)]


def _num(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def profile_svg(rows, title: str = "") -> str:
    """Horizontal bar chart, one bar per term, positive bars to the right.
    Output depends only on ``rows`` and ``title``."""
    bar_h, gap, label_w, half_w, top = 16, 4, 180, 200, 40
    header_h = 22
    width = label_w + 2 * half_w + 80
    scale = max([abs(r.coefficient) for r in rows] + [1e-12])
    axis_x = label_w + half_w
    parts, y = [], top
    section = None
    for r in rows:
        if r.section != section:
            section = r.section
            name = "global backbone" if section == "global" else "per-subject adjustments"
            parts.append(f'<text x="8" y="{y + 15}" font-weight="bold">{name}</text>')
            y += header_h
        w = abs(r.coefficient) / scale * half_w
        x = axis_x if r.coefficient >= 0 else axis_x - w
        color = "#3b6ea5" if r.section == "global" else "#c0703a"
        parts.append(f'<text x="{label_w - 6}" y="{y + 12}" text-anchor="end">{escape(r.term)}</text>')
        parts.append(f'<rect x="{_num(x)}" y="{y}" width="{_num(w)}" height="{bar_h}" fill="{color}"/>')
        tx = axis_x + half_w + 6
        parts.append(f'<text x="{tx}" y="{y + 12}">{r.coefficient:+.4f}</text>')
        y += bar_h + gap
    height = y + 10
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="11">',
            f'<text x="8" y="20" font-size="14">{escape(title)}</text>',
            f'<line x1="{axis_x}" y1="{top}" x2="{axis_x}" y2="{height - 6}" stroke="#444"/>']
    return "\n".join(head + parts + ["</svg>"]) + "\n"


def write_profile(columns, coefficients, csv_path, svg_path, title: str = "") -> list[ProfileRow]:
    rows = coefficient_profile(columns, coefficients)
    write_profile_csv(rows, csv_path)
    Path(svg_path).write_text(profile_svg(rows, title), encoding="utf-8")
    return rows
