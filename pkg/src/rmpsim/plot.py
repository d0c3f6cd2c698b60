"""Deterministic SVG rendering of trajectory logs."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import quoteattr

import numpy as np


@dataclass(frozen=True)
class PlotStyle:
    width: int = 600
    height: int = 600
    margin: float = 30.0
    overlays: int = 5  # formation-graph snapshots, light to dark
    path_color: str = "#e07b1a"
    edge_color: str = "#1f4e9c"
    goal_color: str = "#c81d25"
    stroke: float = 1.5


def _fmt(v: float) -> str:
    # fixed precision keeps output byte-identical across platforms
    return f"{v:.3f}"


def _overlay_indices(samples: int, count: int) -> list:
    if samples <= 1 or count <= 1:
        return [samples - 1]
    idx = np.linspace(0, samples - 1, count).round().astype(int)
    return sorted(set(int(i) for i in idx))


def emit_plot(log, goals=None, style: PlotStyle | None = None) -> str:
    """SVG with trajectories, start markers, goal stars and formation snapshots.

    ``goals`` maps robot id to a goal position. Formation edges come from
    ``log.edges`` and are drawn at evenly spaced samples.
    """
    style = style or PlotStyle()
    q = np.asarray(log.q, dtype=float)
    if q.size == 0:
        raise ValueError("cannot plot an empty log")
    goals = {} if goals is None else {k: np.asarray(v, dtype=float) for k, v in goals.items()}
    ids = list(log.robot_ids)
    col = {rid: k for k, rid in enumerate(ids)}

    pts = q.reshape(-1, q.shape[-1])[:, :2]
    if goals:
        pts = np.vstack([pts, np.array([g[:2] for g in goals.values()])])
    lo, hi = pts.min(0), pts.max(0)
    span = max(float((hi - lo).max()), 1e-9)
    scale = min(style.width, style.height) - 2 * style.margin
    scale /= span
    cx, cy = (lo + hi) / 2

    def xy(p):
        return (style.width / 2 + (p[0] - cx) * scale,
                style.height / 2 - (p[1] - cy) * scale)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" '
           f'height="{style.height}" viewBox="0 0 {style.width} {style.height}">',
           f'<rect width="{style.width}" height="{style.height}" fill="white"/>']

    frames = _overlay_indices(len(q), style.overlays)
    for n, k in enumerate(frames):
        opacity = 0.2 + 0.8 * (n + 1) / len(frames)
        out.append(f'<g class="formation" data-t={quoteattr(_fmt(log.t[k]))} '
                   f'stroke="{style.edge_color}" stroke-opacity="{opacity:.2f}" fill="none">')
        for i, j, _ in log.edges:
            a, b = xy(q[k, col[i]]), xy(q[k, col[j]])
            out.append(f'<line x1="{_fmt(a[0])}" y1="{_fmt(a[1])}" '
                       f'x2="{_fmt(b[0])}" y2="{_fmt(b[1])}"/>')
        out.append('</g>')

    for rid in ids:
        track = q[:, col[rid]]
        if len(track) > 1 and np.ptp(track, axis=0).max() > 0:
            coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in map(xy, track))
            out.append(f'<polyline class="trajectory" data-robot="{rid}" points="{coords}" '
                       f'fill="none" stroke="{style.path_color}" stroke-width="{style.stroke}"/>')
        sx, sy = xy(track[0])
        out.append(f'<circle class="start" data-robot="{rid}" cx="{_fmt(sx)}" cy="{_fmt(sy)}" '
                   f'r="4" fill="black"/>')

    for rid in sorted(goals):
        gx, gy = xy(goals[rid])
        ang = np.pi / 2 + np.arange(10) * np.pi / 5
        rad = np.where(np.arange(10) % 2 == 0, 8.0, 3.5)
        star = " ".join(f"{_fmt(gx + r * np.cos(a))},{_fmt(gy - r * np.sin(a))}"
                        for r, a in zip(rad, ang))
        out.append(f'<polygon class="goal" data-robot="{rid}" points="{star}" '
                   f'fill="{style.goal_color}"/>')

    out.append('</svg>')
    return "\n".join(out) + "\n"
