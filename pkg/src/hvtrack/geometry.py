"""Oriented 3D box math.

Boxes are (cx, cy, cz, w, l, h, yaw) with z up. ``l`` runs along the heading
(local +x), ``w`` along local +y, ``h`` along z. ``yaw`` rotates local into
world about +z and is kept in (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]. In-range values are returned unchanged."""
    a = np.asarray(a, dtype=float)
    out = np.where((a > -math.pi) & (a <= math.pi), a, math.pi - np.mod(math.pi - a, 2.0 * math.pi))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Box7:
    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field in {vals}")
        if min(self.w, self.l, self.h) <= 0:
            raise ValueError(f"box sizes must be positive, got w={self.w} l={self.l} h={self.h}")
        for name in ("cx", "cy", "cz", "w", "l", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", float(wrap_angle(float(self.yaw))))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.w, self.l, self.h)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.w, self.l, self.h, self.yaw])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Box7":
        if len(a) != 7:
            raise ValueError(f"expected 7 box values, got {len(a)}")
        return cls(*(float(v) for v in a))

    def replace(self, **changes) -> "Box7":
        fields = dict(cx=self.cx, cy=self.cy, cz=self.cz, w=self.w, l=self.l, h=self.h, yaw=self.yaw)
        fields.update(changes)
        return Box7(**fields)

    def enlarged(self, dw: float = 0.0, dl: float = 0.0, dh: float = 0.0) -> "Box7":
        return self.replace(w=self.w + dw, l=self.l + dl, h=self.h + dh)


class ObservationAngle(NamedTuple):
    sin_a: float
    cos_a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.sin_a, self.cos_a])


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(box: Box7) -> np.ndarray:
    """Return the (8, 3) corners of ``box``.

    Corners 0-3 are the bottom face counter-clockwise seen from +z, starting
    at local (+l/2, +w/2); corners 4-7 are the top face in the same order.
    """
    hl, hw, hh = box.l / 2, box.w / 2, box.h / 2
    x = np.array([hl, -hl, -hl, hl])
    y = np.array([hw, hw, -hw, -hw])
    local = np.concatenate(
        [np.stack([x, y, np.full(4, -hh)], 1), np.stack([x, y, np.full(4, hh)], 1)]
    )
    return local @ rot_z(box.yaw).T + box.center


def bev_corners(box: Box7) -> np.ndarray:
    return box_corners(box)[:4, :2]


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    # keep the part of ``subject`` left of the directed edge a->b (CCW clip polygon)
    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            t = sc / (sc - sn)
            out.append(cur + t * (nxt - cur))
    return out


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def bev_intersection_area(a: Box7, b: Box7) -> float:
    """Sutherland-Hodgman clip of two rotated rectangles."""
    poly = list(bev_corners(a))
    clip = bev_corners(b)
    for i in range(4):
        if not poly:
            return 0.0
        poly = _clip(poly, clip[i], clip[(i + 1) % 4])
    return polygon_area(poly)


def iou3d(a: Box7, b: Box7) -> float:
    area = bev_intersection_area(a, b)
    if area <= 0.0:
        return 0.0
    top = min(a.cz + a.h / 2, b.cz + b.h / 2)
    bottom = max(a.cz - a.h / 2, b.cz - b.h / 2)
    inter = area * max(0.0, top - bottom)
    if inter <= 0.0:
        return 0.0
    union = a.w * a.l * a.h + b.w * b.l * b.h - inter
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a: Box7, b: Box7) -> float:
    return float(math.dist((a.cx, a.cy, a.cz), (b.cx, b.cy, b.cz)))


def observation_angle(box: Box7, sensor_origin=(0.0, 0.0, 0.0)) -> ObservationAngle:
    """Heading of ``box`` relative to the bearing from the sensor to its center."""
    dx = box.cx - sensor_origin[0]
    dy = box.cy - sensor_origin[1]
    if math.hypot(dx, dy) < 1e-9:
        raise ValueError("box center is directly above/below the sensor; observation angle undefined")
    alpha = wrap_angle(box.yaw - math.atan2(dy, dx))
    return ObservationAngle(math.sin(alpha), math.cos(alpha))


def as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.size == 0:
        return p.reshape(0, 3)
    if p.ndim != 2 or p.shape[1] < 3:
        raise ValueError(f"expected (n, 3) points, got shape {p.shape}")
    p = p[:, :3]
    if not np.isfinite(p).all():
        raise ValueError("point cloud contains non-finite coordinates")
    return p


def to_local_frame(points, ref_box: Box7) -> np.ndarray:
    """Express world points in the frame centered on ``ref_box`` with x along its heading."""
    p = as_points(points)
    return (p - ref_box.center) @ rot_z(ref_box.yaw)


def from_local_frame(points, ref_box: Box7) -> np.ndarray:
    p = as_points(points)
    return p @ rot_z(ref_box.yaw).T + ref_box.center


def box_to_local(box: Box7, ref_box: Box7) -> Box7:
    c = to_local_frame(box.center[None], ref_box)[0]
    return Box7(c[0], c[1], c[2], box.w, box.l, box.h, box.yaw - ref_box.yaw)


def box_from_local(box: Box7, ref_box: Box7) -> Box7:
    c = from_local_frame(box.center[None], ref_box)[0]
    return Box7(c[0], c[1], c[2], box.w, box.l, box.h, box.yaw + ref_box.yaw)


def points_in_box(points, box: Box7, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside ``box`` (boundary inclusive)."""
    local = to_local_frame(points, box)
    half = np.array([box.l / 2, box.w / 2, box.h / 2]) + margin
    return np.all(np.abs(local) <= half, axis=1)


def rigid_transform_box(box: Box7, yaw: float, translation) -> Box7:
    """Rotate ``box`` about the world z axis by ``yaw`` and then translate."""
    c = rot_z(yaw) @ box.center + np.asarray(translation, dtype=float)
    return Box7(c[0], c[1], c[2], box.w, box.l, box.h, box.yaw + yaw)


def rigid_transform_points(points, yaw: float, translation) -> np.ndarray:
    return as_points(points) @ rot_z(yaw).T + np.asarray(translation, dtype=float)
