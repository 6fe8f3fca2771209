from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .rpn import Prediction

LOSS_NAMES = ("l_cc", "l_mask", "l_alpha", "l_rm", "l_box")


@dataclass
class LossBreakdown:
    l_cc: torch.Tensor
    l_mask: torch.Tensor
    l_alpha: torch.Tensor
    l_rm: torch.Tensor
    l_box: torch.Tensor
    weights: tuple[float, ...] = (10.0, 0.2, 1.0, 1.0, 1.0)

    @property
    def components(self) -> tuple:
        return (self.l_cc, self.l_mask, self.l_alpha, self.l_rm, self.l_box)

    @property
    def total(self):
        return sum(w * c for w, c in zip(self.weights, self.components))

    def as_floats(self) -> dict[str, float]:
        out = {n: float(c) for n, c in zip(LOSS_NAMES, self.components)}
        out["total"] = float(self.total)
        return out


def wrap(a: torch.Tensor) -> torch.Tensor:
    return torch.atan2(torch.sin(a), torch.cos(a))


def hvtrack_loss(pred: Prediction, fg: torch.Tensor, gt_center: torch.Tensor, gt_yaw: torch.Tensor,
                 gt_alpha: torch.Tensor, weights=(10.0, 0.2, 1.0, 1.0, 1.0)) -> LossBreakdown:
    """fg (B, N) seed labels; gt_center (B, 3); gt_yaw (B,); gt_alpha (B, 2), all in the canonical frame."""
    fg = fg.to(pred.mask_logits.dtype)
    l_cc = F.mse_loss(pred.coarse_center, gt_center)
    l_mask = F.binary_cross_entropy_with_logits(pred.mask_logits, fg)
    l_alpha = F.huber_loss(pred.alpha, gt_alpha, delta=1.0)
    l_rm = F.binary_cross_entropy_with_logits(pred.targetness_logits, fg)
    resid = torch.cat([pred.center - gt_center, wrap(pred.yaw - gt_yaw).unsqueeze(-1)], dim=-1)
    l_box = F.huber_loss(resid, torch.zeros_like(resid), delta=1.0)
    return LossBreakdown(l_cc, l_mask, l_alpha, l_rm, l_box, tuple(weights))
