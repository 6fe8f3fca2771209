"""Synthetic LiDAR-like tracklets with controllable temporal variation.

Targets and distractors are boxes carrying a fixed surface pattern in their
own frame. Each frame the pattern is posed and culled to the faces whose
outward normal points at the sensor, so the observed shape changes with the
relative pose the same way a real scan does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Frame, Tracklet
from .geometry import Box7, rot_z

# outward normals of the six faces in box-local coordinates (x along length)
_FACE_NORMALS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float
)
_INSET = 1e-3


@dataclass
class SynthConfig:
    n_frames: int = 40
    target_size: tuple[float, float, float] = (1.8, 4.2, 1.6)  # w, l, h
    speed_range: tuple[float, float] = (0.3, 0.8)
    yaw_rate_range: tuple[float, float] = (-0.03, 0.03)
    n_distractors: int = 2
    clutter_density: float = 0.3
    surface_point_density: float = 40.0
    seed: int = 0
    sensor_height: float = 1.73
    arena_radius: float = 25.0
    min_range: float = 6.0
    sensor_range: float = 60.0
    jitter: float = 0.1  # per-frame position noise, as a fraction of the speed

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.surface_point_density <= 0:
            raise ValueError("surface_point_density must be positive")
        if self.clutter_density < 0:
            raise ValueError("clutter_density must be >= 0 (0 disables clutter)")
        if min(self.target_size) <= 0:
            raise ValueError("target_size must be positive")
        if self.speed_range[0] > self.speed_range[1] or self.speed_range[0] < 0:
            raise ValueError(f"bad speed_range {self.speed_range}")
        if self.yaw_rate_range[0] > self.yaw_rate_range[1]:
            raise ValueError(f"bad yaw_rate_range {self.yaw_rate_range}")


def surface_pattern(size, density: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random points on the six faces of a box at the origin.

    Returns (points (n, 3), face index (n,)). Points sit slightly inside the
    faces so they count as inside the box.
    """
    w, l, h = size
    half = np.array([l / 2, w / 2, h / 2])
    pts, faces = [], []
    for f, n in enumerate(_FACE_NORMALS):
        axis = int(np.argmax(np.abs(n)))
        others = [a for a in range(3) if a != axis]
        area = 4 * half[others[0]] * half[others[1]]
        count = max(1, int(round(density * area)))
        p = np.empty((count, 3))
        for a in others:
            p[:, a] = rng.uniform(-half[a] + _INSET, half[a] - _INSET, count)
        p[:, axis] = n[axis] * (half[axis] - _INSET)
        pts.append(p)
        faces.append(np.full(count, f))
    return np.concatenate(pts), np.concatenate(faces)


def visible_points(pattern, faces, box: Box7, sensor) -> np.ndarray:
    """Pose the pattern by ``box`` and keep points whose face looks at the sensor."""
    r = rot_z(box.yaw)
    world = pattern @ r.T + box.center
    normals = _FACE_NORMALS[faces] @ r.T
    keep = np.einsum("ij,ij->i", normals, np.asarray(sensor) - world) > 0
    return world[keep]


def _trajectory(cfg: SynthConfig, rng, start_xy, heading) -> np.ndarray:
    """(n_frames, 3) of x, y, yaw. Constant speed and turn rate plus jitter, reflected at the arena edge."""
    speed = rng.uniform(*cfg.speed_range)
    yaw_rate = rng.uniform(*cfg.yaw_rate_range)
    noise = rng.normal(size=(cfg.n_frames, 2))
    out = np.empty((cfg.n_frames, 3))
    x, y, yaw = float(start_xy[0]), float(start_xy[1]), float(heading)
    lo, hi = cfg.min_range, cfg.arena_radius
    for t in range(cfg.n_frames):
        out[t] = (x, y, yaw)
        yaw += yaw_rate
        nx = x + speed * math.cos(yaw) + cfg.jitter * speed * noise[t, 0]
        ny = y + speed * math.sin(yaw) + cfg.jitter * speed * noise[t, 1]
        r = math.hypot(nx, ny)
        if r > hi or r < lo:
            # reflect the heading off the circle's normal and step back inside
            nrm = math.atan2(ny, nx)
            yaw = 2 * nrm + math.pi - yaw
            bound = hi if r > hi else lo
            scale = (2 * bound - r) / r
            nx, ny = nx * scale, ny * scale
        x, y = nx, ny
    return out


def generate_sequence(cfg: SynthConfig, name: str = "") -> Tracklet:
    rng = np.random.default_rng(cfg.seed)
    w, l, h = cfg.target_size
    ground = -cfg.sensor_height
    sensor = np.zeros(3)
    cz = ground + h / 2

    pattern, faces = surface_pattern(cfg.target_size, cfg.surface_point_density, rng)

    r0 = rng.uniform(cfg.min_range + 2.0, cfg.arena_radius - 4.0)
    b0 = rng.uniform(-math.pi, math.pi)
    start = np.array([r0 * math.cos(b0), r0 * math.sin(b0)])
    target = _trajectory(cfg, rng, start, rng.uniform(-math.pi, math.pi))

    distractors = []
    for _ in range(cfg.n_distractors):
        d_pat = surface_pattern(cfg.target_size, cfg.surface_point_density, rng)
        ang = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(4.0, 9.0)
        d_start = start + dist * np.array([math.cos(ang), math.sin(ang)])
        rr = np.linalg.norm(d_start)
        d_start *= np.clip(rr, cfg.min_range + 1.0, cfg.arena_radius - 1.0) / max(rr, 1e-9)
        distractors.append((d_pat, _trajectory(cfg, rng, d_start, rng.uniform(-math.pi, math.pi))))

    area = math.pi * cfg.arena_radius**2
    n_clutter = int(round(cfg.clutter_density * area))

    frames = []
    for t in range(cfg.n_frames):
        x, y, yaw = target[t]
        box = Box7(x, y, cz, w, l, h, yaw)
        parts = [visible_points(pattern, faces, box, sensor)]
        for d_pat, traj in distractors:
            dx, dy, dyaw = traj[t]
            parts.append(visible_points(*d_pat, Box7(dx, dy, cz, w, l, h, dyaw), sensor))
        if n_clutter:
            rad = cfg.arena_radius * np.sqrt(rng.uniform(0, 1, n_clutter))
            th = rng.uniform(-math.pi, math.pi, n_clutter)
            zc = ground + np.abs(rng.normal(0.0, 0.05, n_clutter))
            parts.append(np.stack([rad * np.cos(th), rad * np.sin(th), zc], 1))
        cloud = np.concatenate(parts)
        cloud = cloud[np.linalg.norm(cloud[:, :2], axis=1) <= cfg.sensor_range]
        frames.append(Frame(t, box, points=cloud))
    return Tracklet(frames, "Synthetic", name=name or f"synth_{cfg.seed}")


def generate_dataset(cfg: SynthConfig, n_tracklets: int) -> list[Tracklet]:
    out = []
    for i in range(n_tracklets):
        c = SynthConfig(**{**cfg.__dict__, "seed": cfg.seed * 100003 + i})
        out.append(generate_sequence(c, name=f"synth_{i:04d}"))
    return out
