from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class MemoryState:
    """FIFO memory banks, oldest entry first along dim 1 (dim 2 for ``lm``).

    lm: (B, L, k, N, C) layer features
    mm: (B, k, N) foreground mask in [0, 1]
    om: (B, k, 2) observation angle (sin, cos)
    coords: (B, k, N, 3) seed coordinates in each entry's own canonical frame
    """

    lm: torch.Tensor
    mm: torch.Tensor
    om: torch.Tensor
    coords: torch.Tensor
    capacity: int

    def __post_init__(self):
        k = self.fill
        if self.mm.shape[1] != k or self.om.shape[1] != k or self.coords.shape[1] != k:
            raise ValueError("memory banks disagree on fill count")
        if k > self.capacity:
            raise ValueError(f"fill {k} exceeds capacity {self.capacity}")

    @property
    def fill(self) -> int:
        return self.lm.shape[2]

    @classmethod
    def start(cls, layer_feats, mask, alpha, coords, capacity: int, detach: bool = True) -> "MemoryState":
        """A memory holding one entry.

        layer_feats (B, L, N, C), mask (B, N), alpha (B, 2), coords (B, N, 3).
        """
        t = _prep(detach)
        return cls(t(layer_feats).unsqueeze(2), t(mask).unsqueeze(1), t(alpha).unsqueeze(1),
                   t(coords).unsqueeze(1), capacity)

    def push(self, layer_feats, mask, alpha, coords, detach: bool = True) -> "MemoryState":
        t = _prep(detach)
        keep = max(0, self.fill + 1 - self.capacity)
        return MemoryState(
            torch.cat([self.lm[:, :, keep:], t(layer_feats).unsqueeze(2)], dim=2),
            torch.cat([self.mm[:, keep:], t(mask).unsqueeze(1)], dim=1),
            torch.cat([self.om[:, keep:], t(alpha).unsqueeze(1)], dim=1),
            torch.cat([self.coords[:, keep:], t(coords).unsqueeze(1)], dim=1),
            self.capacity,
        )

    def with_capacity(self, capacity: int) -> "MemoryState":
        keep = max(0, self.fill - capacity)
        return MemoryState(self.lm[:, :, keep:], self.mm[:, keep:], self.om[:, keep:], self.coords[:, keep:], capacity)


def _prep(detach: bool):
    return (lambda x: x.detach()) if detach else (lambda x: x)
