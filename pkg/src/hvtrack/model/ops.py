"""Batched point-set primitives and attention helpers."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


@torch.no_grad()
def farthest_point_sample(xyz: torch.Tensor, npoint: int) -> torch.Tensor:
    """Indices (B, npoint) of farthest-point samples of ``xyz`` (B, n, 3).

    Starts from the point farthest from the origin. Ties go to the lowest
    index. Once every distinct location is taken, remaining picks are the
    lowest unpicked indices, so indices never repeat while npoint <= n.
    """
    B, n, _ = xyz.shape
    if npoint > n:
        raise ValueError(f"cannot sample {npoint} of {n} points")
    idx = torch.empty(B, npoint, dtype=torch.long, device=xyz.device)
    rows = torch.arange(B, device=xyz.device)
    dist = torch.full((B, n), float("inf"), dtype=xyz.dtype, device=xyz.device)
    far = _argmax_first(xyz.pow(2).sum(-1))
    for i in range(npoint):
        idx[:, i] = far
        d = (xyz - xyz[rows, far].unsqueeze(1)).pow(2).sum(-1)
        dist = torch.minimum(dist, d)
        dist[rows, far] = -1.0
        far = _argmax_first(dist)
    return idx


def _argmax_first(x: torch.Tensor) -> torch.Tensor:
    # torch.argmax does not promise the first maximal index
    m = x.max(dim=-1, keepdim=True).values
    n = x.shape[-1]
    ar = torch.arange(n, device=x.device).expand_as(x)
    return torch.where(x == m, ar, n).min(dim=-1).values


@torch.no_grad()
def knn(query: torch.Tensor, ref: torch.Tensor, k: int) -> torch.Tensor:
    """Indices (B, m, k) of the k nearest ``ref`` points for every ``query`` point."""
    k = min(k, ref.shape[1])
    d = torch.cdist(query, ref)
    return d.topk(k, dim=-1, largest=False, sorted=True).indices


def gather(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Batched gather: x (B, n, C), idx (B, ...) -> (B, ..., C)."""
    B = x.shape[0]
    flat = idx.reshape(B, -1)
    out = torch.gather(x, 1, flat.unsqueeze(-1).expand(-1, -1, x.shape[-1]))
    return out.reshape(*idx.shape, x.shape[-1])


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    B, n, c = x.shape
    return x.view(B, n, heads, c // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    B, h, n, d = x.shape
    return x.transpose(1, 2).reshape(B, n, h * d)


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int):
    """Scaled dot-product attention. Returns (merged output, weights (B, heads, nq, nk))."""
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(qh.shape[-1])
    attn = scores.softmax(dim=-1)
    return merge_heads(attn @ vh), attn


class FFN(nn.Module):
    """max(0, x W1 + b1) W2 + b2"""

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden or 2 * dim)
        self.fc2 = nn.Linear(hidden or 2 * dim, dim)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class EdgeConv(nn.Module):
    """Max over neighbours of a learned map of (x_j - x_i, x_i)."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or out_dim
        self.fc1 = nn.Linear(2 * in_dim, hidden)
        self.norm = nn.LayerNorm(hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, center: torch.Tensor, neighbours: torch.Tensor) -> torch.Tensor:
        # center (B, m, c), neighbours (B, m, k, c)
        c = center.unsqueeze(2).expand_as(neighbours)
        e = torch.cat([neighbours - c, c], dim=-1)
        e = self.fc2(F.relu(self.norm(self.fc1(e))))
        return e.max(dim=2).values
