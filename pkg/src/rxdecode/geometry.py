"""Rotated boxes and geometric IoU.

Boxes live in document coordinates (top increases downward). Rotation is
applied around the box center, in radians, and must lie in (-pi/2, pi/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RotatedBox:
    top: float
    left: float
    height: float
    width: float
    rotation: float = 0.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"degenerate box: height={self.height}, width={self.width}")
        if not (-math.pi / 2 < self.rotation <= math.pi / 2):
            raise ValueError(f"rotation {self.rotation} outside (-pi/2, pi/2]")

    def corners(self) -> list[tuple[float, float]]:
        """Corner points (x, y) in drawing order."""
        cx = self.left + self.width / 2.0
        cy = self.top + self.height / 2.0
        cos_r = math.cos(self.rotation)
        sin_r = math.sin(self.rotation)
        pts = []
        for dx, dy in ((-self.width / 2, -self.height / 2),
                       (self.width / 2, -self.height / 2),
                       (self.width / 2, self.height / 2),
                       (-self.width / 2, self.height / 2)):
            pts.append((cx + dx * cos_r - dy * sin_r, cy + dx * sin_r + dy * cos_r))
        return pts

    @property
    def area(self) -> float:
        return self.height * self.width


def _signed_area(poly: list[tuple[float, float]]) -> float:
    s = 0.0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s / 2.0


def _clip(subject: list[tuple[float, float]], clipper: list[tuple[float, float]]):
    """Sutherland-Hodgman clipping of a convex subject by a convex clipper."""
    if _signed_area(clipper) < 0:
        clipper = list(reversed(clipper))
    output = subject
    n = len(clipper)
    for i in range(n):
        if not output:
            return []
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        points = output
        output = []
        for j in range(len(points)):
            px, py = points[j]
            qx, qy = points[(j + 1) % len(points)]
            d_p = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
            d_q = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
            if d_p >= 0:
                output.append((px, py))
            if (d_p >= 0) != (d_q >= 0):
                t = d_p / (d_p - d_q)
                output.append((px + t * (qx - px), py + t * (qy - py)))
    return output


def box_iou(a: RotatedBox, b: RotatedBox) -> float:
    """Intersection-over-union of two rotated boxes via polygon clipping."""
    inter_poly = _clip(a.corners(), b.corners())
    if len(inter_poly) < 3:
        return 0.0
    inter = abs(_signed_area(inter_poly))
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union
