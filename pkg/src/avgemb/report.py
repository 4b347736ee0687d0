"""RunReport and its JSON / CSV / SVG views.

Rendering is a pure function of the report: nothing here touches numbers
other than formatting them. Floats go through ``repr`` so equal payloads
serialize to equal bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

from .datasets import atomic_write_bytes
from .errors import InvalidParameterError
from .evaluator import ConsistencyCurve

REPORT_VERSION = 1
FORMATS = ("json", "csv", "svg")
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass
class RunReport:
    command: str
    parameters: dict
    curves: list = field(default_factory=list)
    histograms: Optional[list] = None
    diagnostics: Optional[dict] = None
    comparisons: Optional[dict] = None
    warnings: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "command": self.command,
            "parameters": self.parameters,
            "curves": [c.as_dict() for c in self.curves],
            "histograms": self.histograms,
            "diagnostics": self.diagnostics,
            "comparisons": self.comparisons,
            "warnings": self.warnings,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunReport":
        version = raw.get("report_version")
        if version != REPORT_VERSION:
            raise InvalidParameterError(f"unsupported report_version {version!r}")
        return cls(
            command=raw["command"],
            parameters=raw.get("parameters", {}),
            curves=[ConsistencyCurve.from_dict(c) for c in raw.get("curves", [])],
            histograms=raw.get("histograms"),
            diagnostics=raw.get("diagnostics"),
            comparisons=raw.get("comparisons"),
            warnings=raw.get("warnings", []),
            timing=raw.get("timing", {}),
        )

    @classmethod
    def load(cls, path) -> "RunReport":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidParameterError(f"{path}: not a JSON report ({exc})") from None
        return cls.from_dict(raw)


# --------------------------------------------------------------------------
# text renderers
# --------------------------------------------------------------------------


def render_json(report: RunReport) -> str:
    return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"


def render_curves_csv(report: RunReport) -> str:
    lines = ["label,provenance,k,score,stderr,trials"]
    for c in report.curves:
        for k, s, e in zip(c.k_values, c.scores, c.stderr):
            lines.append(f"{c.label},{c.provenance},{k},{s!r},{e!r},{c.trials}")
    return "\n".join(lines) + "\n"


def render_pplus_csv(report: RunReport) -> Optional[str]:
    rows = []
    for c in report.curves:
        pplus = c.details.get("pplus")
        if not pplus:
            continue
        for k, terms in zip(c.k_values, pplus):
            for i, p in enumerate(terms, start=1):
                rows.append(f"{c.label},{k},{i},{p!r}")
    if not rows:
        return None
    return "label,k,i,pplus\n" + "\n".join(rows) + "\n"


def render_histograms_csv(report: RunReport) -> Optional[str]:
    if not report.histograms:
        return None
    lines = ["d,bin_lo,bin_hi,count,density,normal_density"]
    for h in report.histograms:
        edges = h["bin_edges"]
        for b, (count, dens, ndens) in enumerate(zip(h["counts"], h["density"], h["normal_density"])):
            lines.append(f"{h['d']},{edges[b]!r},{edges[b + 1]!r},{count},{dens!r},{ndens!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# svg
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axis_frame(x0, y0, w, h, xlo, xhi, ylo, yhi, title, xlabel, ylabel):
    parts = [
        f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>',
        f'<text x="{x0 + w / 2}" y="{y0 - 8}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{x0 + w / 2}" y="{y0 + h + 34}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="{x0 - 42}" y="{y0 + h / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 - 42} {y0 + h / 2})">{escape(ylabel)}</text>',
    ]
    for t in range(5):
        fx = t / 4
        xv = xlo + fx * (xhi - xlo)
        yv = ylo + fx * (yhi - ylo)
        px = x0 + fx * w
        py = y0 + h - fx * h
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0 + h}" x2="{_fmt(px)}" y2="{y0 + h + 4}" stroke="#333"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{y0 + h + 16}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
        parts.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" stroke="#333"/>')
        parts.append(f'<text x="{x0 - 6}" y="{_fmt(py + 3)}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    return parts


def _curves_svg(report: RunReport) -> str:
    W, H = 720, 460
    x0, y0, w, h = 70, 40, 470, 360
    ks = [k for c in report.curves for k in c.k_values]
    xlo, xhi = (min(ks), max(ks)) if ks else (0, 1)
    if xhi == xlo:
        xhi = xlo + 1
    parts = _axis_frame(x0, y0, w, h, xlo, xhi, 0.0, 1.0, f"Consistency_k ({report.command})", "k", "score")
    for n, c in enumerate(report.curves):
        color = _PALETTE[n % len(_PALETTE)]
        pts = " ".join(
            f"{_fmt(x0 + (k - xlo) / (xhi - xlo) * w)},{_fmt(y0 + h - s * h)}" for k, s in zip(c.k_values, c.scores)
        )
        dash = ' stroke-dasharray="6 3"' if c.provenance == "analytic" else ""
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = y0 + 14 + 18 * n
        parts.append(f'<line x1="{x0 + w + 14}" y1="{ly}" x2="{x0 + w + 38}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        name = c.label or c.provenance
        parts.append(f'<text x="{x0 + w + 44}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    return _wrap(W, H, parts)


def _histograms_svg(report: RunReport) -> str:
    hists = report.histograms
    cols = min(3, len(hists))
    rows = (len(hists) + cols - 1) // cols
    cw, ch = 300, 240
    W, H = cols * cw + 40, rows * ch + 20
    parts = []
    for n, hst in enumerate(hists):
        gx = 60 + (n % cols) * cw
        gy = 40 + (n // cols) * ch
        w, h = cw - 90, ch - 90
        edges = hst["bin_edges"]
        dens = hst["density"]
        ndens = hst["normal_density"]
        ymax = max(max(dens), max(ndens)) or 1.0
        xlo, xhi = edges[0], edges[-1]
        span = (xhi - xlo) or 1.0
        parts += _axis_frame(gx, gy, w, h, xlo, xhi, 0.0, ymax, f"d = {hst['d']}", "similarity", "density")
        for b, v in enumerate(dens):
            bx = gx + (edges[b] - xlo) / span * w
            bw = (edges[b + 1] - edges[b]) / span * w
            bh = v / ymax * h
            parts.append(
                f'<rect x="{_fmt(bx)}" y="{_fmt(gy + h - bh)}" width="{_fmt(bw)}" height="{_fmt(bh)}" '
                f'fill="#9ecae1" stroke="none"/>'
            )
        pts = " ".join(
            f"{_fmt(gx + (0.5 * (edges[b] + edges[b + 1]) - xlo) / span * w)},{_fmt(gy + h - v / ymax * h)}"
            for b, v in enumerate(ndens)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="1.5"/>')
    return _wrap(W, H, parts)


def _wrap(W, H, parts) -> str:
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        f'font-family="sans-serif">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
    )


def render_svg(report: RunReport) -> str:
    if report.histograms:
        return _histograms_svg(report)
    return _curves_svg(report)


def write_report(report: RunReport, out_dir, formats=FORMATS) -> list:
    """Write the requested views under ``out_dir``; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, text):
        if text is None:
            return
        path = out / name
        atomic_write_bytes(path, text.encode("utf-8"))
        written.append(path)

    if "json" in formats:
        emit("report.json", render_json(report))
    if "csv" in formats:
        emit("curves.csv", render_curves_csv(report))
        emit("pplus.csv", render_pplus_csv(report))
        emit("histograms.csv", render_histograms_csv(report))
    if "svg" in formats:
        emit("chart.svg", render_svg(report))
    return written
