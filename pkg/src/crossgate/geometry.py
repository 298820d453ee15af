"""Intersection layout and path-relative (Frenet) geometry.

Two orthogonal two-lane roads cross at the origin; lane width 3.5 m,
approach legs 60 m. The ego enters northbound on the east lane of the
north-south road (centerline x = +1.75) and follows one of three
reference paths: straight through, a right turn onto the eastbound lane
(y = -1.75), or a left turn onto the westbound lane (y = +1.75).
"""

from __future__ import annotations

import math

import numpy as np

LANE_WIDTH = 3.5
HALF_LANE = LANE_WIDTH / 2.0
APPROACH_LEN = 60.0
BOX_HALF = LANE_WIDTH          # intersection box spans |x|,|y| <= 3.5
EGO_LANE_X = HALF_LANE         # northbound lane centerline
RIGHT_EXIT_Y = -HALF_LANE      # eastbound lane centerline
LEFT_EXIT_Y = HALF_LANE        # westbound lane centerline

MANEUVERS = ("left", "right", "straight")

_STEP = 0.25                   # polyline resolution, metres


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.atan2(math.sin(theta), math.cos(theta))


class ReferencePath:
    """Polyline reference path with arc length and per-segment headings."""

    def __init__(self, xs: np.ndarray, ys: np.ndarray, maneuver: str):
        self.maneuver = maneuver
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        if self.xs.size < 2 or self.xs.size != self.ys.size:
            raise ValueError("path needs at least two matching vertices")
        dx = np.diff(self.xs)
        dy = np.diff(self.ys)
        seg_len = np.hypot(dx, dy)
        self.s = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.seg_heading = np.arctan2(dy, dx)
        self.length = float(self.s[-1])
        # unit tangents per segment, reused by the projector
        self._tx = dx / seg_len
        self._ty = dy / seg_len
        self._seg_len = seg_len

    def point_at(self, s: float) -> tuple[float, float, float]:
        """Position and heading at arc length s; extrapolates beyond the ends."""
        if s <= 0.0:
            h = float(self.seg_heading[0])
            return (float(self.xs[0] + s * math.cos(h)),
                    float(self.ys[0] + s * math.sin(h)), h)
        if s >= self.length:
            h = float(self.seg_heading[-1])
            extra = s - self.length
            return (float(self.xs[-1] + extra * math.cos(h)),
                    float(self.ys[-1] + extra * math.sin(h)), h)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        t = (s - self.s[i]) / self._seg_len[i]
        return (float(self.xs[i] + t * (self.xs[i + 1] - self.xs[i])),
                float(self.ys[i] + t * (self.ys[i + 1] - self.ys[i])),
                float(self.seg_heading[i]))

    def heading_at(self, s: float) -> float:
        if s <= 0.0:
            return float(self.seg_heading[0])
        if s >= self.length:
            return float(self.seg_heading[-1])
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        return float(self.seg_heading[i])

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Project a point onto the path.

        Returns (s, d): arc length of the closest path point and the
        signed lateral offset (positive to the left of the tangent).
        """
        # nearest vertex, then exact projection onto its adjacent segments
        d2 = (self.xs - x) ** 2 + (self.ys - y) ** 2
        j = int(np.argmin(d2))
        best_s, best_d, best_dist = 0.0, 0.0, math.inf
        for i in (j - 1, j):
            if i < 0 or i >= len(self._seg_len):
                continue
            px = x - self.xs[i]
            py = y - self.ys[i]
            t = (px * self._tx[i] + py * self._ty[i])
            t = min(max(t, 0.0), self._seg_len[i])
            cx = px - t * self._tx[i]
            cy = py - t * self._ty[i]
            dist = math.hypot(cx, cy)
            if dist < best_dist:
                best_dist = dist
                best_s = float(self.s[i] + t)
                # positive d on the left of the tangent
                best_d = float(px * -self._ty[i] + py * self._tx[i])
        return best_s, best_d


def _arc(cx: float, cy: float, radius: float, a0: float, a1: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(2, int(abs(a1 - a0) * radius / _STEP))
    ang = np.linspace(a0, a1, n + 1)
    return cx + radius * np.cos(ang), cy + radius * np.sin(ang)


def build_path(maneuver: str) -> ReferencePath:
    """Reference path for a maneuver, starting at the approach-lane origin."""
    if maneuver not in MANEUVERS:
        raise ValueError(f"unknown maneuver '{maneuver}'")
    y0 = -(BOX_HALF + APPROACH_LEN)
    if maneuver == "straight":
        n = int((2 * (BOX_HALF + APPROACH_LEN)) / _STEP)
        ys = np.linspace(y0, BOX_HALF + APPROACH_LEN, n + 1)
        xs = np.full_like(ys, EGO_LANE_X)
        return ReferencePath(xs, ys, maneuver)
    if maneuver == "right":
        # approach up to the box edge, clockwise quarter arc, exit east
        n1 = int((APPROACH_LEN) / _STEP)
        ys_in = np.linspace(y0, -BOX_HALF, n1 + 1)
        xs_in = np.full_like(ys_in, EGO_LANE_X)
        radius = BOX_HALF - HALF_LANE          # 1.75
        ax, ay = _arc(EGO_LANE_X + radius, -BOX_HALF, radius, math.pi, math.pi / 2)
        n2 = int((APPROACH_LEN) / _STEP)
        xs_out = np.linspace(EGO_LANE_X + radius, BOX_HALF + APPROACH_LEN, n2 + 1)
        ys_out = np.full_like(xs_out, RIGHT_EXIT_Y)
        xs = np.concatenate([xs_in, ax[1:], xs_out[1:]])
        ys = np.concatenate([ys_in, ay[1:], ys_out[1:]])
        return ReferencePath(xs, ys, maneuver)
    # left: counter-clockwise arc onto the westbound lane
    n1 = int((APPROACH_LEN) / _STEP)
    ys_in = np.linspace(y0, -BOX_HALF, n1 + 1)
    xs_in = np.full_like(ys_in, EGO_LANE_X)
    radius = BOX_HALF + HALF_LANE              # 5.25
    ax, ay = _arc(EGO_LANE_X - radius, -BOX_HALF, radius, 0.0, math.pi / 2)
    n2 = int((APPROACH_LEN) / _STEP)
    xs_out = np.linspace(EGO_LANE_X - radius, -(BOX_HALF + APPROACH_LEN), n2 + 1)
    ys_out = np.full_like(xs_out, LEFT_EXIT_Y)
    xs = np.concatenate([xs_in, ax[1:], xs_out[1:]])
    ys = np.concatenate([ys_in, ay[1:], ys_out[1:]])
    return ReferencePath(xs, ys, maneuver)
