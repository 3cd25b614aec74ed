"""Static SVG plots of reconstructions.

Pure functions of a solve report (plus optional ground truth), emitting
self-contained SVG text with fixed number formatting, so regenerating a
plot from a stored report is byte-identical.  Layout: planar paths
panel, x(t) and y(t) panels, and an amplitude panel when the atoms
carry an amplitude channel.
"""

from __future__ import annotations

import numpy as np

from .curves import eval_amplitude, eval_curve
from .observation import GroundTruth
from .solver import SolveReport

PANEL_W = 280
PANEL_H = 260
MARGIN = 42
DENSE_SAMPLES = 200

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
TRUTH_STYLE = 'stroke="#888888" stroke-width="1.5" stroke-dasharray="6 4"'


def _num(v) -> str:
    return format(float(v), ".6g")


def _series_range(series, fallback):
    vals = [v for _, ys, _ in series for v in np.ravel(ys)]
    if not vals:
        return fallback
    lo, hi = float(min(vals)), float(max(vals))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Panel:
    """One framed data panel; data series in (x, y, style) triples where
    style is a raw SVG stroke attribute string."""

    def __init__(self, x0, title, xlabel, ylabel, series, xlim=None, ylim=None):
        self.x0 = x0
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series = series
        self.xlim = xlim or _series_range(
            [(None, xs, None) for xs, _, _ in series], (0.0, 1.0)
        )
        self.ylim = ylim or _series_range(series, (-1.0, 1.0))

    def _tx(self, xs):
        lo, hi = self.xlim
        frac = (np.asarray(xs, dtype=float) - lo) / (hi - lo)
        return self.x0 + MARGIN + frac * (PANEL_W - 2 * MARGIN)

    def _ty(self, ys):
        lo, hi = self.ylim
        frac = (np.asarray(ys, dtype=float) - lo) / (hi - lo)
        return MARGIN + (1.0 - frac) * (PANEL_H - 2 * MARGIN)

    def render(self) -> list[str]:
        left, top = self.x0 + MARGIN, MARGIN
        w, h = PANEL_W - 2 * MARGIN, PANEL_H - 2 * MARGIN
        out = [
            f'<rect x="{left}" y="{top}" width="{w}" height="{h}" '
            'fill="none" stroke="#333333" stroke-width="1"/>',
            f'<text x="{self.x0 + PANEL_W // 2}" y="{MARGIN - 14}" '
            'text-anchor="middle" font-size="13">' + self.title + "</text>",
            f'<text x="{self.x0 + PANEL_W // 2}" y="{PANEL_H - 8}" '
            'text-anchor="middle" font-size="11">' + self.xlabel + "</text>",
            f'<text x="{self.x0 + 12}" y="{PANEL_H // 2}" font-size="11" '
            f'transform="rotate(-90 {self.x0 + 12} {PANEL_H // 2})" '
            'text-anchor="middle">' + self.ylabel + "</text>",
        ]
        for lim, pos, anchor in (
            (self.xlim[0], (left, top + h + 14), "start"),
            (self.xlim[1], (left + w, top + h + 14), "end"),
        ):
            out.append(
                f'<text x="{pos[0]}" y="{pos[1]}" text-anchor="{anchor}" '
                f'font-size="9">{_num(lim)}</text>'
            )
        for lim, y in ((self.ylim[0], top + h), (self.ylim[1], top + 6)):
            out.append(
                f'<text x="{left - 4}" y="{y}" text-anchor="end" '
                f'font-size="9">{_num(lim)}</text>'
            )
        for xs, ys, style in self.series:
            px, py = self._tx(xs), self._ty(ys)
            d = "M " + " L ".join(
                f"{_num(a)},{_num(b)}" for a, b in zip(px, py)
            )
            out.append(f'<path d="{d}" fill="none" {style}/>')
        return out


def _atom_samples(report: SolveReport, dense):
    params = report.energy_config.metric
    integ = report.solver_config.integrator
    out = []
    for atom in report.measure.atoms:
        pts = eval_curve(atom.curve, dense, params, integ)
        amps = eval_amplitude(atom.curve, dense)
        out.append((atom.mass, pts, None if amps is None else atom.mass * amps))
    return out


def _truth_samples(truth: GroundTruth | None, dense):
    if truth is None:
        return []
    out = []
    for curve, mass in zip(truth.curves, truth.masses):
        pts = eval_curve(curve, dense)
        amps = eval_amplitude(curve, dense)
        out.append((mass, pts, None if amps is None else mass * amps))
    return out


def render_report_svg(report: SolveReport, truth: GroundTruth | None = None) -> str:
    """SVG overlay: planar paths, x(t), y(t), and amplitudes if present."""
    dense = np.linspace(0.0, 1.0, DENSE_SAMPLES)
    atoms = _atom_samples(report, dense)
    truths = _truth_samples(truth, dense)
    with_amp = any(a[2] is not None for a in atoms + truths)

    def styled(i):
        color = PALETTE[i % len(PALETTE)]
        return f'stroke="{color}" stroke-width="2"'

    half = 1.0
    planar = [(pts[:, 0], pts[:, 1], TRUTH_STYLE) for _, pts, _ in truths]
    planar += [
        (pts[:, 0], pts[:, 1], styled(i)) for i, (_, pts, _) in enumerate(atoms)
    ]
    xt = [(dense, pts[:, 0], TRUTH_STYLE) for _, pts, _ in truths]
    xt += [(dense, pts[:, 0], styled(i)) for i, (_, pts, _) in enumerate(atoms)]
    yt = [(dense, pts[:, 1], TRUTH_STYLE) for _, pts, _ in truths]
    yt += [(dense, pts[:, 1], styled(i)) for i, (_, pts, _) in enumerate(atoms)]

    panels = [
        _Panel(0, "paths", "x", "y", planar,
               xlim=(-half, half), ylim=(-half, half)),
        _Panel(PANEL_W, "x over time", "t", "x", xt, xlim=(0.0, 1.0)),
        _Panel(2 * PANEL_W, "y over time", "t", "y", yt, xlim=(0.0, 1.0)),
    ]
    if with_amp:
        at = [
            (dense, amp, TRUTH_STYLE) for _, _, amp in truths if amp is not None
        ]
        at += [
            (dense, amp, styled(i))
            for i, (_, _, amp) in enumerate(atoms)
            if amp is not None
        ]
        panels.append(
            _Panel(3 * PANEL_W, "intensity over time", "t", "mass x amp", at,
                   xlim=(0.0, 1.0))
        )

    width = PANEL_W * len(panels)
    body = []
    for p in panels:
        body.extend(p.render())
    header = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" '
        'font-family="sans-serif">\n'
        f'<rect width="{width}" height="{PANEL_H}" fill="white"/>\n'
    )
    return header + "\n".join(body) + "\n</svg>\n"


def write_report_svg(
    report: SolveReport, path, truth: GroundTruth | None = None
) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(render_report_svg(report, truth))
