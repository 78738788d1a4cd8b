"""Deterministic SVG plots: torque families, centerline projections, traces.

Coordinates are printed with fixed precision and elements are emitted in a
fixed order, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .core import ValidationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")
PANEL_W, PANEL_H, MARGIN = 320.0, 260.0, 40.0


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Panel:
    """Maps data coordinates into one plotting rectangle."""

    def __init__(self, x0, y0, xlim, ylim, equal=False, w=PANEL_W, h=PANEL_H):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        (xa, xb), (ya, yb) = _pad(xlim), _pad(ylim)
        if equal:
            span = max(xb - xa, yb - ya)
            cx, cy = 0.5 * (xa + xb), 0.5 * (ya + yb)
            xa, xb, ya, yb = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
        self.xlim, self.ylim = (xa, xb), (ya, yb)

    def map(self, x, y):
        (xa, xb), (ya, yb) = self.xlim, self.ylim
        px = self.x0 + (np.asarray(x) - xa) / (xb - xa) * self.w
        py = self.y0 + self.h - (np.asarray(y) - ya) / (yb - ya) * self.h
        return px, py

    def frame(self, title, xlabel, ylabel) -> list[str]:
        out = [
            f'<rect x="{_f(self.x0)}" y="{_f(self.y0)}" width="{_f(self.w)}" height="{_f(self.h)}" '
            'fill="none" stroke="#444" stroke-width="1"/>',
            f'<text x="{_f(self.x0 + self.w / 2)}" y="{_f(self.y0 - 8)}" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{_f(self.x0 + self.w / 2)}" y="{_f(self.y0 + self.h + 30)}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
            f'<text x="{_f(self.x0 - 30)}" y="{_f(self.y0 + self.h / 2)}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {_f(self.x0 - 30)} {_f(self.y0 + self.h / 2)})">{escape(ylabel)}</text>',
        ]
        for val, anchor in ((self.xlim[0], "start"), (self.xlim[1], "end")):
            px, _ = self.map(val, self.ylim[0])
            out.append(
                f'<text x="{_f(float(px))}" y="{_f(self.y0 + self.h + 14)}" text-anchor="{anchor}" font-size="9">{val:.3g}</text>'
            )
        for val in self.ylim:
            _, py = self.map(self.xlim[0], val)
            out.append(f'<text x="{_f(self.x0 - 4)}" y="{_f(float(py))}" text-anchor="end" font-size="9">{val:.3g}</text>')
        return out

    def polyline(self, x, y, color, cls="series", dash=None) -> str:
        px, py = self.map(x, y)
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(np.atleast_1d(px), np.atleast_1d(py)))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _pad(lim):
    a, b = float(lim[0]), float(lim[1])
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValidationError("plot limits must be finite")
    if b - a < 1e-12:
        a, b = a - 1.0, b + 1.0
    pad = 0.05 * (b - a)
    return a - pad, b + pad


def _document(width, height, body) -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif">\n'
        f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _legend(x, y, labels) -> list[str]:
    out = []
    for i, lab in enumerate(labels):
        c = PALETTE[i % len(PALETTE)]
        yy = y + 14 * i
        out.append(f'<line x1="{_f(x)}" y1="{_f(yy)}" x2="{_f(x + 16)}" y2="{_f(yy)}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{_f(x + 20)}" y="{_f(yy + 4)}" font-size="10">{escape(lab)}</text>')
    return out


def torque_family_svg(surrogate, p_levels=None, u_range=None, n: int = 101, title: str | None = None) -> str:
    """``tau_n(p, u)`` against ``u`` for several actuation levels.

    ``surrogate`` needs ``eval(p, u)``; ranges default to its operating range.
    """
    rng = getattr(surrogate, "operating_range", None) or {}
    if p_levels is None:
        if "p" not in rng:
            raise ValidationError("p_levels not given and surrogate has no operating range")
        p_levels = np.linspace(rng["p"][0], rng["p"][1], 4)
    if u_range is None:
        if "u" not in rng:
            raise ValidationError("u_range not given and surrogate has no operating range")
        u_range = rng["u"]
    p_levels = [float(p) for p in p_levels]
    u = np.linspace(float(u_range[0]), float(u_range[1]), n)
    curves = [np.asarray(surrogate.eval(p, u), dtype=float) for p in p_levels]
    allv = np.concatenate(curves)
    panel = _Panel(MARGIN + 20, MARGIN, (u[0], u[-1]), (allv.min(), allv.max()))
    axis = getattr(surrogate, "axis_label", "")
    body = panel.frame(title or f"joint effort, axis {axis}", "deflection u", "effort tau")
    for i, tau in enumerate(curves):
        body.append(panel.polyline(u, tau, PALETTE[i % len(PALETTE)]))
    body += _legend(panel.x0 + panel.w + 12, MARGIN + 10, [f"p = {p:.4g}" for p in p_levels])
    return _document(panel.x0 + panel.w + 110, MARGIN + PANEL_H + 50, body)


VIEWS = (("x-z (front)", 0, 2), ("y-z (side)", 1, 2), ("x-y (top)", 0, 1))


def centerline_svg(curves, labels=None, title: str = "centerline") -> str:
    """Three orthographic projections of one or more (n, 3) point arrays."""
    curves = [np.asarray(getattr(c, "points", c), dtype=float) for c in curves]
    if not curves:
        raise ValidationError("no curves to plot")
    labels = list(labels) if labels is not None else [f"curve {i}" for i in range(len(curves))]
    allp = np.vstack(curves)
    body = [f'<text x="{_f(MARGIN)}" y="{_f(18)}" font-size="14">{escape(title)}</text>']
    for k, (name, a, b) in enumerate(VIEWS):
        panel = _Panel(
            MARGIN + 20 + k * (PANEL_W + 60),
            MARGIN,
            (allp[:, a].min(), allp[:, a].max()),
            (allp[:, b].min(), allp[:, b].max()),
            equal=True,
        )
        body += panel.frame(name, "xyz"[a] + " [mm]", "xyz"[b] + " [mm]")
        for i, c in enumerate(curves):
            body.append(panel.polyline(c[:, a], c[:, b], PALETTE[i % len(PALETTE)], dash="4 2" if i else None))
    width = MARGIN + 20 + 3 * (PANEL_W + 60)
    body += _legend(width - 50, MARGIN + PANEL_H + 50, labels)
    return _document(width + 60, MARGIN + PANEL_H + 60 + 14 * len(labels), body)


def trace_svg(history, title: str = "optimization trace") -> str:
    """Best-so-far and per-generation best objective against evaluations.

    A log scale is used when every value is positive.
    """
    rows = list(history)
    if not rows:
        raise ValidationError("empty trace")
    ev = np.array([float(r["evaluations"]) for r in rows])
    best = np.array([float(r["best_so_far"]) for r in rows])
    gen = np.array([float(r["best_f"]) for r in rows])
    vals = np.concatenate([best, gen])
    vals = vals[np.isfinite(vals)]
    log = bool(vals.size and np.all(vals > 0))
    tf = (lambda v: np.log10(v)) if log else (lambda v: v)
    yb, yg = tf(best), tf(np.where(np.isfinite(gen), gen, np.nan))
    ok = np.isfinite(yg)
    lim = tf(vals) if vals.size else np.array([0.0, 1.0])
    panel = _Panel(MARGIN + 20, MARGIN, (ev.min(), ev.max()), (lim.min(), lim.max()))
    body = panel.frame(title, "evaluations", "log10 objective" if log else "objective")
    if ok.any():
        body.append(panel.polyline(ev[ok], yg[ok], PALETTE[1], dash="3 2"))
    body.append(panel.polyline(ev, yb, PALETTE[0]))
    body += _legend(panel.x0 + panel.w + 12, MARGIN + 10, ["best so far", "generation best"])
    return _document(panel.x0 + panel.w + 130, MARGIN + PANEL_H + 50, body)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path
