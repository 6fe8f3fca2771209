from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..geometry import Box7


@dataclass
class Prediction:
    center: torch.Tensor             # (B, 3) canonical frame
    yaw: torch.Tensor                # (B,)
    size: torch.Tensor               # (B, 3) w, l, h copied from the template
    mask_logits: torch.Tensor        # (B, N)
    targetness_logits: torch.Tensor  # (B, N)
    alpha: torch.Tensor              # (B, 2) unit (sin, cos)
    coarse_center: torch.Tensor      # (B, 3)
    coords: torch.Tensor             # (B, N, 3) seed coordinates

    @property
    def mask(self) -> torch.Tensor:
        return torch.sigmoid(self.mask_logits)

    @property
    def targetness(self) -> torch.Tensor:
        return torch.sigmoid(self.targetness_logits)

    def box(self, i: int = 0) -> Box7:
        c = self.center[i].detach().double().tolist()
        s = self.size[i].detach().double().tolist()
        return Box7(c[0], c[1], c[2], s[0], s[1], s[2], float(self.yaw[i]))


def weighted_mean(v: torch.Tensor, w: torch.Tensor, fallback: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of v (B, n, d) under weights w (B, n).

    Rows whose weights sum to (almost) zero use ``fallback`` weights instead,
    or a plain mean if none are given.
    """
    if fallback is None:
        fallback = torch.ones_like(w)
    dead = w.sum(1, keepdim=True) <= 1e-12
    w = torch.where(dead, fallback, w)
    return (v * w.unsqueeze(-1)).sum(1) / w.sum(1, keepdim=True)


class RPN(nn.Module):
    """Per-point voting head.

    Every seed votes for the target center and yaw. The coarse center is the
    targetness-weighted mean over all votes; the final pose uses only seeds
    whose targetness is above the median.
    """

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.mlp = nn.Sequential(nn.Linear(c + 3, c), nn.ReLU(), nn.Linear(c, c), nn.ReLU())
        self.mask = nn.Linear(c, 1)
        self.targetness = nn.Linear(c, 1)
        self.vote = nn.Linear(c, 3)
        self.yaw = nn.Linear(c, 1)
        self.alpha = nn.Linear(c, 2)

    def forward(self, feats, xyz, template_size) -> Prediction:
        h = self.mlp(torch.cat([feats, xyz], dim=-1))
        mask_logits = self.mask(h).squeeze(-1)
        t_logits = self.targetness(h).squeeze(-1)
        votes = xyz + self.vote(h)
        yaw_votes = self.yaw(h)
        w = torch.sigmoid(t_logits)

        coarse = weighted_mean(votes, w)
        above = t_logits > t_logits.median(dim=1, keepdim=True).values
        above = above | ~above.any(dim=1, keepdim=True)
        sel = above.to(w.dtype)
        pose = weighted_mean(torch.cat([votes, yaw_votes], dim=-1), w * sel, fallback=sel)
        alpha = F.normalize(weighted_mean(self.alpha(h), w), dim=-1, eps=1e-12)

        size = torch.as_tensor(template_size, dtype=feats.dtype, device=feats.device)
        size = size.expand(feats.shape[0], 3) if size.dim() == 1 else size
        return Prediction(pose[:, :3], pose[:, 3], size, mask_logits, t_logits, alpha, coarse, xyz)
