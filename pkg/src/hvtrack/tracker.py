"""Online tracking loop and run records."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import (
    CATEGORIES,
    EmptySearchArea,
    Tracklet,
    crop_search_area,
    enlargement_offset,
    foreground_mask,
    sample_points,
)
from .geometry import Box7, box_from_local, box_to_local, observation_angle
from .model import HVTrack, MemoryState

log = logging.getLogger(__name__)


class InitializationError(RuntimeError):
    pass


@dataclass
class TrackConfig:
    interval: int = 1
    offset: float | None = None           # None: look up the enlargement table
    vertical_offset: float | None = None  # None: same as offset
    seed: int = 0
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    synthetic_category: str = "Car"       # table row used for synthetic tracklets

    def search_offset(self, category: str) -> float:
        if self.offset is not None:
            return float(self.offset)
        if category not in CATEGORIES:
            category = self.synthetic_category
        return enlargement_offset(category, self.interval)


@dataclass
class TrackRun:
    name: str
    category: str
    frame_ids: list[int]
    pred_boxes: list[Box7]
    gt_boxes: list[Box7]
    times: list[float]
    empty_frames: list[int] = field(default_factory=list)
    skipped: str | None = None
    skipped_frames: int = 0   # tracklet length when skipped

    def __len__(self):
        return len(self.frame_ids)


def _tensor(a, model: HVTrack) -> torch.Tensor:
    p = next(model.parameters())
    return torch.as_tensor(np.asarray(a), dtype=p.dtype, device=p.device).unsqueeze(0)


def _search_points(cloud, ref_box: Box7, category: str, cfg: TrackConfig, n: int, frame_index: int):
    crop = crop_search_area(cloud, ref_box, cfg.search_offset(category), cfg.vertical_offset)
    return sample_points(crop, n, [cfg.seed, frame_index])


@torch.no_grad()
def init_track(cloud, gt_box: Box7, model: HVTrack, cfg: TrackConfig, category: str = "Car") -> MemoryState:
    """Memory holding one entry built from the first frame's ground truth."""
    model.eval()
    try:
        pts = _search_points(cloud, gt_box, category, cfg, model.cfg.n_input, 0)
    except EmptySearchArea as e:
        raise InitializationError("first frame has no points around the target") from e
    local = box_to_local(gt_box, gt_box)
    fg = foreground_mask(pts, local)
    alpha = observation_angle(gt_box, cfg.sensor_origin).as_array()
    memory, _ = model.bootstrap(_tensor(pts, model), _tensor(fg, model), _tensor(alpha, model),
                                gt_box.size, model.cfg.k_test)
    return memory


@torch.no_grad()
def step(memory: MemoryState, cloud, last_box: Box7, category: str, model: HVTrack, cfg: TrackConfig,
         frame_index: int = 0) -> tuple[Box7, MemoryState, bool]:
    """Track one frame. Returns (world box, new memory, empty_crop)."""
    model.eval()
    try:
        pts = _search_points(cloud, last_box, category, cfg, model.cfg.n_input, frame_index)
    except EmptySearchArea:
        return last_box, memory, True
    out = model(_tensor(pts, model), memory, last_box.size)
    box = box_from_local(out.pred.box(0), last_box)
    memory = model.update(memory.with_capacity(model.cfg.k_test), out)
    return box, memory, False


def run_tracklet(tracklet: Tracklet, model: HVTrack, cfg: TrackConfig) -> TrackRun:
    """One-pass evaluation of a tracklet: ground truth is read at frame 0 only."""
    first = tracklet.frames[0]
    run = TrackRun(tracklet.name, tracklet.category, [], [], [], [])
    t0 = time.perf_counter()
    try:
        memory = init_track(first.cloud(), first.gt_box, model, cfg, tracklet.category)
    except InitializationError as e:
        log.warning("skipping %s: %s", tracklet.name, e)
        run.skipped = str(e)
        run.skipped_frames = len(tracklet)
        return run
    box = first.gt_box
    run.frame_ids.append(first.frame_id)
    run.pred_boxes.append(box)
    run.gt_boxes.append(first.gt_box)
    run.times.append(time.perf_counter() - t0)
    for i, fr in enumerate(tracklet.frames[1:], 1):
        t0 = time.perf_counter()
        box, memory, empty = step(memory, fr.cloud(), box, tracklet.category, model, cfg, i)
        run.times.append(time.perf_counter() - t0)
        if empty:
            run.empty_frames.append(i)
        run.frame_ids.append(fr.frame_id)
        run.pred_boxes.append(box)
        run.gt_boxes.append(fr.gt_box)  # logged for evaluation only
    return run


# --------------------------------------------------------------------------- records
#
# Tab-separated text. ``#`` lines are comments. A run starts with
#   run <name> <category>
# followed by one line per frame
#   <frame_id> <7 predicted box fields> <7 gt box fields> <wall seconds>
# Skipped tracklets are a single line
#   skipped <name> <category> <frame count> <reason>

RECORD_HEADER = "# hvtrack-runs v1"


def _f(x: float) -> str:
    return repr(float(x))


def write_runs(path, runs: list[TrackRun]):
    lines = [RECORD_HEADER]
    for r in runs:
        if r.skipped is not None:
            reason = " ".join(r.skipped.split())
            lines.append(f"skipped\t{r.name}\t{r.category}\t{r.skipped_frames}\t{reason}")
            continue
        lines.append(f"run\t{r.name}\t{r.category}")
        for fid, p, g, t in zip(r.frame_ids, r.pred_boxes, r.gt_boxes, r.times):
            vals = [str(fid)] + [_f(v) for v in p.as_array()] + [_f(v) for v in g.as_array()] + [_f(t)]
            lines.append("\t".join(vals))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


class RecordError(ValueError):
    pass


def read_runs(path) -> list[TrackRun]:
    runs: list[TrackRun] = []
    cur = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "run":
                if len(parts) != 3:
                    raise ValueError("run header needs a name and a category")
                cur = TrackRun(parts[1], parts[2], [], [], [], [])
                runs.append(cur)
            elif parts[0] == "skipped":
                if len(parts) < 4:
                    raise ValueError("skipped line needs name, category and frame count")
                runs.append(TrackRun(parts[1], parts[2], [], [], [], [], skipped="\t".join(parts[4:]),
                                     skipped_frames=int(parts[3])))
                cur = None
            else:
                if cur is None:
                    raise ValueError("frame line outside a run")
                if len(parts) != 16:
                    raise ValueError(f"expected 16 fields, got {len(parts)}")
                vals = [float(v) for v in parts[1:]]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite value")
                cur.frame_ids.append(int(parts[0]))
                cur.pred_boxes.append(Box7.from_array(vals[0:7]))
                cur.gt_boxes.append(Box7.from_array(vals[7:14]))
                cur.times.append(vals[14])
        except ValueError as e:
            raise RecordError(f"{path}:{lineno}: malformed record: {e}") from e
    return runs
