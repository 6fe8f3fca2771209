"""Sequence training with teacher-forced search areas."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .dataset import EmptySearchArea, Tracklet, crop_search_area, foreground_mask, sample_points
from .geometry import Box7, box_to_local, observation_angle
from .model import HVTrack, ModelConfig, hvtrack_loss
from .model.loss import LOSS_NAMES
from .tracker import TrackConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 4
    seq_len: int = 8
    lr: float = 1e-3
    cosine_lr: bool = False      # anneal lr to zero over the run
    seed: int = 0
    ref_jitter: float = 0.0      # std (m) of noise added to the teacher-forced reference center
    ref_yaw_jitter: float = 0.0  # std (rad) of the same for yaw
    grad_clip: float = 10.0
    log_every: int = 10
    threads: int = 0             # 0 leaves torch's default


class TrainingError(RuntimeError):
    pass


MAX_REDRAWS = 100


def _prepare(cloud, ref: Box7, gt: Box7, offset, vertical_offset, n, rng, sensor):
    crop = crop_search_area(cloud, ref, offset, vertical_offset)
    pts = sample_points(crop, n, rng)
    gt_local = box_to_local(gt, ref)
    return pts, foreground_mask(pts, gt_local), gt_local, observation_angle(gt, sensor).as_array()


def _jitter(box: Box7, rng, pos: float, yaw: float) -> Box7:
    if pos <= 0 and yaw <= 0:
        return box
    d = rng.normal(0.0, pos, 2) if pos > 0 else np.zeros(2)
    return box.replace(cx=box.cx + d[0], cy=box.cy + d[1], yaw=box.yaw + (rng.normal(0.0, yaw) if yaw > 0 else 0.0))


class SequenceSampler:
    """Draws batches of ``seq_len`` consecutive frames at random starts."""

    def __init__(self, tracklets: Sequence[Tracklet], seq_len: int, rng: np.random.Generator):
        self.pool = [t for t in tracklets if len(t) >= seq_len]
        if not self.pool:
            raise TrainingError(f"no tracklet has the {seq_len} frames a training sequence needs")
        self.seq_len = seq_len
        self.rng = rng

    def draw(self, batch: int) -> list[tuple[Tracklet, int]]:
        out = []
        for _ in range(batch):
            t = self.pool[self.rng.integers(len(self.pool))]
            out.append((t, int(self.rng.integers(len(t) - self.seq_len + 1))))
        return out


def train_step(model: HVTrack, opt, batch, cfg: TrainConfig, track_cfg: TrackConfig, rng) -> dict[str, float]:
    mc = model.cfg
    dtype = next(model.parameters()).dtype
    B = len(batch)

    def tensor(a):
        return torch.as_tensor(np.stack(a), dtype=dtype)

    def frame_batch(t, first: bool):
        pts, fg, gts, alphas = [], [], [], []
        for tracklet, start in batch:
            frames = tracklet.frames
            gt = frames[start + t].gt_box
            ref = gt if first else _jitter(frames[start + t - 1].gt_box, rng, cfg.ref_jitter, cfg.ref_yaw_jitter)
            off = track_cfg.search_offset(tracklet.category)
            try:
                p, f, g, a = _prepare(frames[start + t].cloud(), ref, gt, off, track_cfg.vertical_offset,
                                      mc.n_input, rng, track_cfg.sensor_origin)
            except EmptySearchArea:
                # nothing near the reference: sample around the target itself (raises again if that is empty too)
                p, f, g, a = _prepare(frames[start + t].cloud(), gt, gt, off, track_cfg.vertical_offset,
                                      mc.n_input, rng, track_cfg.sensor_origin)
            pts.append(p)
            fg.append(f)
            gts.append(g.as_array())
            alphas.append(a)
        return tensor(pts), tensor(fg), tensor(gts), tensor(alphas)

    model.train()
    size = tensor([batch[i][0].frames[batch[i][1]].gt_box.size for i in range(B)])
    pts, fg, _, alpha = frame_batch(0, True)
    with torch.no_grad():
        memory, _ = model.bootstrap(pts, fg, alpha, size, mc.k_train)
    # the backbone does not see the memory, so all later frames go through it in one batch
    later = [frame_batch(t, False) for t in range(1, cfg.seq_len)]
    xyz, feats, idx = (v.unflatten(0, (len(later), B))
                       for v in model.backbone(torch.cat([f[0] for f in later])))
    losses = []
    for t, (_, fg, gt, alpha) in enumerate(later):
        out = model.transform(xyz[t], feats[t], idx[t], memory, size)
        seed_fg = torch.gather(fg, 1, out.seed_idx)
        lb = hvtrack_loss(out.pred, seed_fg, gt[:, :3], gt[:, 6], alpha, mc.loss_weights)
        losses.append(lb)
        memory = model.update(memory, out)
    total = sum(lb.total for lb in losses) / len(losses)
    if not torch.isfinite(total):
        parts = {n: [float(getattr(lb, n).detach()) for lb in losses] for n in LOSS_NAMES}
        raise FloatingPointError(f"non-finite training loss; per-frame components: {parts}")
    opt.zero_grad()
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    opt.step()
    rec = {n: float(sum(getattr(lb, n).detach() for lb in losses) / len(losses)) for n in LOSS_NAMES}
    rec["total"] = float(total.detach())
    return rec


def train(model_cfg: ModelConfig, cfg: TrainConfig, tracklets: Sequence[Tracklet], track_cfg: TrackConfig | None = None,
          callback: Callable[[int, dict], None] | None = None) -> tuple[HVTrack, list[dict]]:
    """Train a fresh model. Fully determined by ``cfg.seed``."""
    track_cfg = track_cfg or TrackConfig()
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sampler = SequenceSampler(tracklets, cfg.seq_len, rng)
    model = HVTrack(model_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.steps) if cfg.cosine_lr else None
    history = []
    t0 = time.perf_counter()
    for it in range(cfg.steps):
        for _ in range(MAX_REDRAWS):
            try:
                rec = train_step(model, opt, sampler.draw(cfg.batch_size), cfg, track_cfg, rng)
                break
            except EmptySearchArea:
                continue  # a window with a pointless frame; draw another
        else:
            raise TrainingError(f"{MAX_REDRAWS} consecutive batches hit frames without any target points")
        if sched is not None:
            sched.step()
        rec["step"] = it
        history.append(rec)
        if callback:
            callback(it, rec)
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.steps - 1):
            log.info("step %d  total %.4f  (%.1fs)", it, rec["total"], time.perf_counter() - t0)
    model.eval()
    return model, history


def format_loss_log(history: list[dict]) -> str:
    cols = ["step", "total", *LOSS_NAMES]
    lines = ["\t".join(cols)]
    for rec in history:
        lines.append("\t".join([str(rec["step"])] + [repr(rec[c]) for c in cols[1:]]))
    return "\n".join(lines) + "\n"


def check_finite(history: list[dict]) -> bool:
    return all(math.isfinite(r["total"]) for r in history)
