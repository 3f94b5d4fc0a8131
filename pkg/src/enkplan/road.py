"""Road centerline geometry: arclength parametrization, projection, lanes.

The centerline is a polyline; all queries clamp to the valid arclength range
so planners running off either end degrade gracefully instead of raising.
Lateral offsets are signed, positive to the left of the direction of travel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RoadGeometry:
    centerline: np.ndarray  # (M, 2) vertices
    half_width: float
    arclength: np.ndarray = field(init=False)
    _seg_dir: np.ndarray = field(init=False, repr=False)
    _seg_len: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("centerline must be an (M>=2, 2) array")
        if not self.half_width > 0.0:
            raise ValueError("half_width must be positive")
        deltas = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(deltas, axis=1)
        if np.any(seg_len <= 0.0):
            raise ValueError("centerline arclength must be strictly increasing")
        self.centerline = pts
        self._seg_len = seg_len
        self._seg_dir = deltas / seg_len[:, None]
        self.arclength = np.concatenate([[0.0], np.cumsum(seg_len)])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def _segment_index(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.searchsorted(self.arclength, s, side="right") - 1
        return np.clip(idx, 0, len(self._seg_len) - 1), s

    def point_at(self, s):
        """Centerline point(s) at arclength s (clamped to the road)."""
        idx, s = self._segment_index(s)
        t = s - self.arclength[idx]
        return self.centerline[idx] + self._seg_dir[idx] * t[..., None]

    def heading_at(self, s):
        """Tangent heading at arclength s."""
        idx, _ = self._segment_index(s)
        d = self._seg_dir[idx]
        return np.arctan2(d[..., 1], d[..., 0])

    def normal_at(self, s):
        """Left unit normal at arclength s."""
        idx, _ = self._segment_index(s)
        d = self._seg_dir[idx]
        return np.stack([-d[..., 1], d[..., 0]], axis=-1)

    def offset_point(self, s, lateral):
        """Point at arclength s shifted laterally (positive = left)."""
        return self.point_at(s) + np.asarray(lateral)[..., None] * self.normal_at(s)

    def project(self, points, s_window=None):
        """Project points (..., 2) onto the centerline.

        Returns (s, lateral): arclength of the foot point and the signed
        lateral offset. ``s_window=(lo, hi)`` restricts the segment search to
        an arclength band, which keeps repeated local queries cheap on long
        roads.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        j0, j1 = 0, len(self._seg_len)
        if s_window is not None:
            lo, hi = s_window
            j0 = int(np.clip(np.searchsorted(self.arclength, lo, "right") - 1,
                             0, len(self._seg_len) - 1))
            j1 = int(np.clip(np.searchsorted(self.arclength, hi, "left") + 1,
                             j0 + 1, len(self._seg_len)))
        starts = self.centerline[j0:j1]          # (J, 2)
        dirs = self._seg_dir[j0:j1]
        lens = self._seg_len[j0:j1]
        rel = pts[:, None, :] - starts[None, :, :]          # (N, J, 2)
        t = np.clip(np.einsum("njk,jk->nj", rel, dirs), 0.0, lens[None, :])
        foot = starts[None, :, :] + t[..., None] * dirs[None, :, :]
        d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=-1)
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        s = self.arclength[j0 + best] + t[rows, best]
        diff = pts - foot[rows, best]
        dbest = dirs[best]
        lateral = dbest[:, 0] * diff[:, 1] - dbest[:, 1] * diff[:, 0]
        if np.asarray(points).ndim == 1:
            return float(s[0]), float(lateral[0])
        return s, lateral


def straight_road(length, half_width, start=(0.0, 0.0), heading=0.0, spacing=5.0):
    n = max(2, int(np.ceil(length / spacing)) + 1)
    s = np.linspace(0.0, length, n)
    d = np.array([np.cos(heading), np.sin(heading)])
    pts = np.asarray(start, dtype=float) + s[:, None] * d
    return RoadGeometry(pts, half_width)


def arc_road(radius, angle_span, half_width, start=(0.0, 0.0), heading=0.0,
             spacing=1.0):
    """Circular arc of given radius; positive angle_span turns left."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    length = abs(angle_span) * radius
    n = max(2, int(np.ceil(length / spacing)) + 1)
    s = np.linspace(0.0, length, n)
    sign = 1.0 if angle_span >= 0 else -1.0
    # circle center sits one radius to the left (or right) of the start
    cx = start[0] - sign * radius * np.sin(heading)
    cy = start[1] + sign * radius * np.cos(heading)
    theta = heading - sign * np.pi / 2.0 + sign * s / radius
    pts = np.stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)], axis=1)
    return RoadGeometry(pts, half_width)


def s_curve_road(arc_length=200.0, radius=220.0, half_width=3.5,
                 start=(0.0, 0.0), heading=0.0, spacing=1.0):
    """Two opposing arcs of equal length: a left sweep then a right sweep."""
    span = arc_length / radius
    first = arc_road(radius, span, half_width, start, heading, spacing)
    join_heading = heading + span
    second = arc_road(radius, -span, half_width, first.centerline[-1], join_heading,
                      spacing)
    pts = np.vstack([first.centerline, second.centerline[1:]])
    return RoadGeometry(pts, half_width)


def build_road(spec: dict) -> RoadGeometry:
    """Construct a road from a config mapping (see configs/ for examples)."""
    kind = spec.get("kind")
    half_width = float(spec.get("half_width", 3.5))
    if kind == "straight":
        return straight_road(float(spec["length"]), half_width,
                             start=tuple(spec.get("start", (0.0, 0.0))),
                             heading=float(spec.get("heading", 0.0)),
                             spacing=float(spec.get("spacing", 5.0)))
    if kind == "arc":
        return arc_road(float(spec["radius"]), float(spec["angle_span"]), half_width,
                        start=tuple(spec.get("start", (0.0, 0.0))),
                        heading=float(spec.get("heading", 0.0)),
                        spacing=float(spec.get("spacing", 1.0)))
    if kind == "s_curve":
        return s_curve_road(arc_length=float(spec.get("arc_length", 200.0)),
                            radius=float(spec.get("radius", 220.0)),
                            half_width=half_width,
                            start=tuple(spec.get("start", (0.0, 0.0))),
                            heading=float(spec.get("heading", 0.0)),
                            spacing=float(spec.get("spacing", 1.0)))
    if kind == "polyline":
        pts = np.asarray(spec["points"], dtype=float)
        return RoadGeometry(pts, half_width)
    if kind == "polyline_file":
        pts = np.loadtxt(spec["path"], delimiter=",")
        return RoadGeometry(pts, half_width)
    raise ValueError(f"unknown road kind {kind!r}")
