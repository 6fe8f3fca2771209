from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .ops import EdgeConv, farthest_point_sample, gather, knn


class Backbone(nn.Module):
    """Graph-conv feature extractor standing in for DGCNN.

    Seeds are picked by farthest-point sampling. Each seed first pools edge
    features over its nearest input points (local geometry), then over its
    nearest seeds (wider context), with a residual between the two.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.n_points = cfg.n_points
        self.k = cfg.backbone_k
        self.local = EdgeConv(3, c, hidden=max(c // 2, 8))
        self.graph = EdgeConv(c, c)
        self.norm = nn.LayerNorm(c)

    def forward(self, points: torch.Tensor):
        """points (B, n_in, 3) -> seed coords (B, N, 3), features (B, N, C), seed indices (B, N)."""
        idx = farthest_point_sample(points, self.n_points)
        seeds = gather(points, idx)
        f = self.local(seeds, gather(points, knn(seeds, points, self.k)))
        f = self.norm(f + self.graph(f, gather(f, knn(seeds, seeds, self.k))))
        return seeds, f, idx
