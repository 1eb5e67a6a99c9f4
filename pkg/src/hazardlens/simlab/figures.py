"""Figure helpers: the change-point conditional HR curve and a tiny SVG writer."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from ..causal import theta_from_tau
from ..core import DomainError
from ..frailty import GammaFrailty, MarginalModel, hrz_curve

__all__ = ["fig9_curve", "calibrate_fig9_baseline", "write_svg"]


def fig9_curve(beta1, beta2, nu, baseline, tau, tgrid):
    """Conditional hazard ratio of a fitted change-point model at Kendall's ``tau``.

    ``baseline`` is a constant rate or a cumulative-hazard step function
    such as the Breslow estimate of the fit.
    """
    if not 0 <= tau < 1:
        raise DomainError("tau must lie in [0, 1)")
    m = MarginalModel(beta1, beta2, nu, baseline)
    return hrz_curve(m, GammaFrailty(theta_from_tau(tau)), tgrid, route="closed")


def calibrate_fig9_baseline(beta1, nu, tau, target):
    """Constant baseline rate at which the curve reaches ``target`` at ``nu``.

    Solves ``exp(beta1) exp{theta rate nu (exp(beta1) - 1)} = target``.
    """
    theta = theta_from_tau(tau)
    e1 = math.exp(beta1)
    if theta == 0 or e1 == 1:
        raise DomainError("no frailty or no effect: the curve is flat")
    rate = math.log(target / e1) / (theta * nu * (e1 - 1))
    if not rate > 0:
        raise DomainError("target not reachable with a positive baseline")
    return rate


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def write_svg(path, series, title="", xlabel="t", ylabel="", width=640, height=400):
    """Write line plots as a self-contained SVG.

    ``series`` maps a label to ``(x, y)``; non-finite points break the line.
    """
    margin = dict(left=60, right=150, top=30, bottom=45)
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ok = np.isfinite(xs) & np.isfinite(ys)
    if not ok.any():
        raise DomainError("nothing to plot")
    x0, x1 = xs[ok].min(), xs[ok].max()
    y0, y1 = ys[ok].min(), ys[ok].max()
    if x1 == x0:
        x1 = x0 + 1
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw = width - margin["left"] - margin["right"]
    ph = height - margin["top"] - margin["bottom"]

    def px(x):
        return margin["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return margin["top"] + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{margin["left"]}" y="{margin["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(6):
        xv = x0 + k * (x1 - x0) / 5
        yv = y0 + k * (y1 - y0) / 5
        out.append(f'<text x="{px(xv):.1f}" y="{margin["top"] + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{margin["left"] - 5}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{margin["left"] + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{margin["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {margin["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (x, y)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        good = np.isfinite(x) & np.isfinite(y)
        runs, current = [], []
        for xi, yi, g in zip(x, y, good):
            if g:
                current.append(f"{px(xi):.2f},{py(yi):.2f}")
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        for run in runs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(run)}"/>')
        ly = margin["top"] + 14 * (i + 1)
        lx = margin["left"] + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 25}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
