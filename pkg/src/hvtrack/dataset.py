"""KITTI tracking ingestion, KITTI-HV construction and search-area preparation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import (
    Box7,
    ObservationAngle,
    as_points,
    box_to_local,
    observation_angle,
    points_in_box,
    to_local_frame,
)

log = logging.getLogger(__name__)

CATEGORIES = ("Car", "Pedestrian", "Van", "Cyclist")
TRACKLET_CATEGORIES = CATEGORIES + ("Synthetic",)

SPLITS = {
    "train": tuple(range(0, 17)),
    "val": (17, 18),
    "test": (19, 20),
}

# rows: frame interval, columns: CATEGORIES
OFFSET_TABLE = {
    1: (2.0, 2.0, 2.0, 2.0),
    2: (2.0, 2.0, 3.0, 2.0),
    3: (3.0, 2.0, 3.0, 2.0),
    5: (4.0, 2.0, 5.0, 3.0),
    10: (7.0, 3.0, 8.0, 4.0),
}

INDEX_FORMAT = "hvtrack-index"
INDEX_VERSION = 1


class IngestionError(RuntimeError):
    pass


class EmptySearchArea(RuntimeError):
    """Raised when a crop holds no points to sample from."""


@dataclass
class Frame:
    frame_id: int
    gt_box: Box7
    points: np.ndarray | None = None
    loader: Callable[[], np.ndarray] | None = field(default=None, repr=False, compare=False)

    def cloud(self) -> np.ndarray:
        if self.points is None:
            if self.loader is None:
                raise IngestionError(f"frame {self.frame_id} has no point data")
            return self.loader()
        return self.points


@dataclass
class Tracklet:
    frames: list[Frame]
    category: str
    name: str = ""
    sequence: int | None = None
    track_id: int | None = None

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a tracklet needs at least one frame")
        if self.category not in TRACKLET_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        ids = [f.frame_id for f in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"frame ids must be strictly increasing in tracklet {self.name!r}")

    def __len__(self):
        return len(self.frames)

    @property
    def frame_ids(self) -> list[int]:
        return [f.frame_id for f in self.frames]

    @property
    def boxes(self) -> list[Box7]:
        return [f.gt_box for f in self.frames]


@dataclass
class SearchSample:
    points: np.ndarray          # (n_in, 3) canonical frame
    gt_box_local: Box7
    fg_mask: np.ndarray         # (n_in,) 0/1
    gt_alpha: ObservationAngle


# --------------------------------------------------------------------------- KITTI


def _check_category(category: str):
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")


def read_calib(path: Path) -> dict[str, np.ndarray]:
    """Parse a KITTI calibration file into 4x4 homogeneous matrices.

    Both the tracking (``R_rect``, ``Tr_velo_cam``) and object
    (``R0_rect:``, ``Tr_velo_to_cam:``) spellings are accepted.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IngestionError(f"cannot read calibration {path}: {e}") from e
    raw = {}
    for line in text.splitlines():
        parts = line.replace(":", " ", 1).split()
        if len(parts) < 2:
            continue
        try:
            raw[parts[0]] = np.array([float(v) for v in parts[1:]])
        except ValueError as e:
            raise IngestionError(f"corrupt calibration line in {path}: {line!r}") from e

    def pick(*names):
        for n in names:
            if n in raw:
                return raw[n]
        raise IngestionError(f"calibration {path} is missing {names[0]}")

    r0 = np.eye(4)
    r0[:3, :3] = pick("R_rect", "R0_rect").reshape(3, 3)
    tr = np.eye(4)
    tr[:3, :4] = pick("Tr_velo_cam", "Tr_velo_to_cam").reshape(3, 4)
    return {"R0_rect": r0, "Tr_velo_cam": tr}


def camera_box_to_lidar(h, w, l, x, y, z, rotation_y, calib) -> Box7:
    """Convert a KITTI camera-frame label (bottom-center location) into a LiDAR Box7."""
    center_cam = np.array([x, y - h / 2.0, z, 1.0])
    cam_to_velo = np.linalg.inv(calib["R0_rect"] @ calib["Tr_velo_cam"])
    c = cam_to_velo @ center_cam
    return Box7(c[0], c[1], c[2], w, l, h, -rotation_y - math.pi / 2)


def read_velodyne(path: Path) -> np.ndarray:
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as e:
        raise IngestionError(f"cannot read LiDAR frame {path}: {e}") from e
    if raw.size % 4:
        raise IngestionError(f"corrupt LiDAR frame {path}: {raw.size} floats is not a multiple of 4")
    return raw.reshape(-1, 4)[:, :3].astype(np.float64)


def _layout(root: Path) -> Path:
    root = Path(root)
    if (root / "label_02").is_dir():
        return root
    if (root / "training" / "label_02").is_dir():
        return root / "training"
    raise IngestionError(f"{root} does not look like a KITTI tracking root (no label_02/)")


def parse_label_file(path: Path) -> list[dict]:
    rows = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise IngestionError(f"cannot read labels {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 17:
            raise IngestionError(f"{path}:{lineno}: expected at least 17 fields, got {len(parts)}")
        try:
            rows.append(
                dict(
                    frame=int(parts[0]),
                    track_id=int(parts[1]),
                    type=parts[2],
                    h=float(parts[10]),
                    w=float(parts[11]),
                    l=float(parts[12]),
                    x=float(parts[13]),
                    y=float(parts[14]),
                    z=float(parts[15]),
                    rotation_y=float(parts[16]),
                )
            )
        except ValueError as e:
            raise IngestionError(f"{path}:{lineno}: {e}") from e
    return rows


def load_sequence_tracklets(root: Path, sequence: int, category: str) -> list[Tracklet]:
    _check_category(category)
    base = _layout(root)
    label_path = base / "label_02" / f"{sequence:04d}.txt"
    rows = [r for r in parse_label_file(label_path) if r["type"] == category]
    if not rows:
        return []
    calib = read_calib(base / "calib" / f"{sequence:04d}.txt")
    velo_dir = base / "velodyne" / f"{sequence:04d}"
    by_track: dict[int, list[dict]] = {}
    for r in rows:
        by_track.setdefault(r["track_id"], []).append(r)
    out = []
    for tid in sorted(by_track):
        frames = []
        for r in sorted(by_track[tid], key=lambda r: r["frame"]):
            box = camera_box_to_lidar(r["h"], r["w"], r["l"], r["x"], r["y"], r["z"], r["rotation_y"], calib)
            bin_path = velo_dir / f"{r['frame']:06d}.bin"
            if not bin_path.is_file():
                raise IngestionError(f"missing LiDAR frame {bin_path}")
            frames.append(Frame(r["frame"], box, loader=lambda p=bin_path: read_velodyne(p)))
        out.append(Tracklet(frames, category, name=f"{sequence:04d}_{tid}", sequence=sequence, track_id=tid))
    return out


def load_kitti_tracklets(root, category: str, split: str) -> list[Tracklet]:
    """One tracklet per (sequence, track_id) of ``category`` in the split's sequences."""
    _check_category(category)
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}; expected one of {tuple(SPLITS)}")
    base = _layout(root)
    out = []
    for seq in SPLITS[split]:
        if not (base / "label_02" / f"{seq:04d}.txt").is_file():
            log.debug("sequence %04d absent under %s", seq, base)
            continue
        out.extend(load_sequence_tracklets(root, seq, category))
    return out


# --------------------------------------------------------------------------- KITTI-HV


def build_hv(tracklets: Iterable[Tracklet], interval: int) -> list[Tracklet]:
    """Split every tracklet into ``min(len, interval)`` strided sub-tracklets."""
    if int(interval) != interval or interval < 1:
        raise ValueError(f"interval must be a positive integer, got {interval}")
    interval = int(interval)
    out = []
    for t in tracklets:
        for i in range(min(len(t), interval)):
            frames = t.frames[i::interval]
            name = t.name if interval == 1 else f"{t.name}@{interval}+{i}"
            out.append(Tracklet(list(frames), t.category, name=name, sequence=t.sequence, track_id=t.track_id))
    return out


def enlargement_offset(category: str, interval: int) -> float:
    """Metres added to the reference box's width and length to form the search area.

    Intervals between table rows interpolate linearly; beyond the last row the
    last row is used.
    """
    _check_category(category)
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    col = CATEGORIES.index(category)
    if interval in OFFSET_TABLE:
        return OFFSET_TABLE[interval][col]
    rows = sorted(OFFSET_TABLE)
    xs = np.array(rows, dtype=float)
    ys = np.array([OFFSET_TABLE[r][col] for r in rows])
    return float(np.interp(interval, xs, ys))


def crop_search_area(cloud, ref_box: Box7, offset: float, vertical_offset: float | None = None) -> np.ndarray:
    """Points inside ``ref_box`` grown by ``offset`` in w and l, in the box's canonical frame.

    ``vertical_offset`` defaults to ``offset``; pass 0 to leave the height untouched.
    """
    if offset < 0:
        raise ValueError("offset must be non-negative")
    dh = offset if vertical_offset is None else vertical_offset
    pts = as_points(cloud)
    if len(pts) == 0:
        return pts
    keep = points_in_box(pts, ref_box.enlarged(offset, offset, dh))
    return to_local_frame(pts[keep], ref_box)


def sample_points(cloud, n: int, seed) -> np.ndarray:
    """Draw exactly ``n`` points; with replacement only when the cloud is smaller than ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptySearchArea("empty search area")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pts), size=n, replace=len(pts) < n)
    return pts[idx]


def foreground_mask(points, box: Box7) -> np.ndarray:
    return points_in_box(points, box).astype(np.float64)


def make_search_sample(
    cloud,
    ref_box: Box7,
    gt_box: Box7,
    offset: float,
    n: int,
    seed,
    sensor_origin=(0.0, 0.0, 0.0),
    vertical_offset: float | None = None,
) -> SearchSample:
    crop = crop_search_area(cloud, ref_box, offset, vertical_offset)
    pts = sample_points(crop, n, seed)
    gt_local = box_to_local(gt_box, ref_box)
    return SearchSample(pts, gt_local, foreground_mask(pts, gt_local), observation_angle(gt_box, sensor_origin))


def motion_stats(tracklets: Sequence[Tracklet], interval: int, quantiles=(0.25, 0.5, 0.75, 0.95, 0.9973, 1.0)) -> dict:
    """Quantiles and mean of xy displacement between consecutive HV-sampled frames.

    Quantiles interpolate linearly between order statistics.
    """
    if any(not 0.0 <= q <= 1.0 for q in quantiles):
        raise ValueError("quantiles must lie in [0, 1]")
    d = []
    for t in build_hv(tracklets, interval):
        c = np.array([[b.cx, b.cy] for b in t.boxes])
        if len(c) > 1:
            d.extend(np.linalg.norm(np.diff(c, axis=0), axis=1))
    if not d:
        raise ValueError("no displacement pairs: every sampled tracklet has a single frame")
    d = np.asarray(d)
    out = {float(q): float(np.quantile(d, q, method="linear")) for q in quantiles}
    out["mean"] = float(d.mean())
    return out


# --------------------------------------------------------------------------- cache index
#
# A cache directory holds ``index.jsonl``: a header line
#   {"format": "hvtrack-index", "version": 1, "source": "kitti"|"synth", ...}
# followed by one JSON object per tracklet
#   {"name", "category", "sequence", "track_id", "frame_ids": [...], "file"?: "..."}
# KITTI entries point back at ``root`` in the header; synthetic entries name an
# ``.npz`` file in the same directory holding ``boxes`` (n, 7), ``frame_ids``
# and per-frame point arrays ``points_<i>``.


def write_kitti_index(path, tracklets: Sequence[Tracklet], root, category: str, split: str, interval: int):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = dict(format=INDEX_FORMAT, version=INDEX_VERSION, source="kitti", root=str(Path(root).resolve()),
                  category=category, split=split, interval=interval)
    with open(path / "index.jsonl", "w") as f:
        f.write(json.dumps(header) + "\n")
        for t in tracklets:
            f.write(json.dumps(dict(name=t.name, category=t.category, sequence=t.sequence,
                                    track_id=t.track_id, frame_ids=t.frame_ids)) + "\n")


def write_synth_index(path, tracklets: Sequence[Tracklet], interval: int = 1, extra: dict | None = None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = dict(format=INDEX_FORMAT, version=INDEX_VERSION, source="synth", interval=interval, **(extra or {}))
    with open(path / "index.jsonl", "w") as f:
        f.write(json.dumps(header) + "\n")
        for i, t in enumerate(tracklets):
            fname = f"tracklet_{i:04d}.npz"
            arrays = {f"points_{j}": fr.cloud().astype(np.float64) for j, fr in enumerate(t.frames)}
            np.savez_compressed(path / fname, boxes=np.stack([b.as_array() for b in t.boxes]),
                                frame_ids=np.array(t.frame_ids), **arrays)
            f.write(json.dumps(dict(name=t.name or f"synth_{i:04d}", category=t.category, sequence=t.sequence,
                                    track_id=t.track_id, frame_ids=t.frame_ids, file=fname)) + "\n")


def read_index(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    index = path / "index.jsonl" if path.is_dir() else path
    try:
        lines = [ln for ln in index.read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise IngestionError(f"cannot read tracklet index {index}: {e}") from e
    try:
        header, entries = json.loads(lines[0]), [json.loads(ln) for ln in lines[1:]]
    except (IndexError, json.JSONDecodeError) as e:
        raise IngestionError(f"corrupt tracklet index {index}: {e}") from e
    if header.get("format") != INDEX_FORMAT:
        raise IngestionError(f"{index} is not an hvtrack index")
    if header.get("version") != INDEX_VERSION:
        raise IngestionError(f"{index}: unsupported index version {header.get('version')}")
    return header, entries


def load_cache(path) -> tuple[dict, list[Tracklet]]:
    """Load tracklets listed in a cache index, whatever their source."""
    path = Path(path)
    header, entries = read_index(path)
    base = path if path.is_dir() else path.parent
    out = []
    if header["source"] == "synth":
        for e in entries:
            try:
                with np.load(base / e["file"]) as z:
                    boxes = z["boxes"]
                    ids = z["frame_ids"]
                    frames = [Frame(int(ids[j]), Box7.from_array(boxes[j]), points=z[f"points_{j}"])
                              for j in range(len(ids))]
            except (OSError, KeyError, ValueError) as err:
                raise IngestionError(f"corrupt synthetic tracklet {base / e['file']}: {err}") from err
            out.append(Tracklet(frames, e["category"], name=e["name"], sequence=e.get("sequence"),
                                track_id=e.get("track_id")))
    elif header["source"] == "kitti":
        cache: dict[int, dict[int, Tracklet]] = {}
        for e in entries:
            seq = e["sequence"]
            if seq not in cache:
                cache[seq] = {t.track_id: t for t in load_sequence_tracklets(header["root"], seq, e["category"])}
            src = cache[seq].get(e["track_id"])
            if src is None:
                raise IngestionError(f"index entry {e['name']} not found under {header['root']}")
            by_id = {f.frame_id: f for f in src.frames}
            out.append(Tracklet([by_id[i] for i in e["frame_ids"]], e["category"], name=e["name"],
                                sequence=seq, track_id=e["track_id"]))
    else:
        raise IngestionError(f"unknown index source {header['source']!r}")
    return header, out
