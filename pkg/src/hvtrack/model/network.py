from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import AttentionBundle, TransformerLayer
from .backbone import Backbone
from .config import ModelConfig
from .memory import MemoryState
from .rpn import RPN, Prediction


@dataclass
class ForwardOutput:
    pred: Prediction
    layer_inputs: torch.Tensor       # (B, L, N, C): X_0 .. X_{L-1}
    coords: torch.Tensor             # (B, N, 3)
    seed_idx: torch.Tensor           # (B, N) indices into the input points
    bundles: list[AttentionBundle]
    template_feats: list[torch.Tensor]  # Mem_l per layer, (B, kN, C)
    cpa_attn: list[torch.Tensor]


class HVTrack(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.layers = nn.ModuleList([TransformerLayer(cfg) for _ in range(cfg.layers)])
        self.rpn = RPN(cfg.channels)

    def forward(self, points: torch.Tensor, memory: MemoryState, template_size) -> ForwardOutput:
        """points (B, n_in, 3) in the canonical frame of the reference box."""
        if memory.fill < 1:
            raise ValueError("memory is empty; initialise the track first")
        xyz, x, idx = self.backbone(points)
        return self.transform(xyz, x, idx, memory, template_size)

    def transform(self, xyz, x, idx, memory: MemoryState, template_size) -> ForwardOutput:
        mem_xyz = memory.coords.flatten(1, 2)
        inputs, bundles, mems, cpa_attn = [], [], [], []
        for l, layer in enumerate(self.layers):
            inputs.append(x)
            mem, _ = layer.rpm(memory.lm[:, l], memory.mm, memory.om, memory.coords)
            xh, bundle = layer.bea(x, xyz, mem, mem_xyz)
            x, a = layer.cpa(xh, bundle)
            mems.append(mem)
            bundles.append(bundle)
            cpa_attn.append(a)
        pred = self.rpn(x, xyz, template_size)
        return ForwardOutput(pred, torch.stack(inputs, dim=1), xyz, idx, bundles, mems, cpa_attn)

    def bootstrap(self, points, fg, alpha, template_size, capacity: int):
        """First-frame memory.

        A throwaway single-entry memory holds the backbone features for every
        layer together with the ground-truth mask and angle; one pass through
        the network then yields the real first entry. ``fg`` (B, n_in) labels
        the input points, ``alpha`` (B, 2) is the ground-truth angle.
        """
        xyz, x, idx = self.backbone(points)
        seed_fg = torch.gather(fg.to(x.dtype), 1, idx)
        alpha = alpha.to(x.dtype)
        L = len(self.layers)
        detach = self.cfg.detach_memory
        boot = MemoryState.start(x.unsqueeze(1).expand(-1, L, -1, -1), seed_fg, alpha, xyz, 1, detach)
        out = self.transform(xyz, x, idx, boot, template_size)
        memory = MemoryState.start(out.layer_inputs, seed_fg, alpha, xyz, capacity, detach)
        return memory, out

    def update(self, memory: MemoryState, out: ForwardOutput) -> MemoryState:
        return memory.push(out.layer_inputs, out.pred.mask, out.pred.alpha, out.coords, self.cfg.detach_memory)


def hvtrack_forward(model: HVTrack, points, memory: MemoryState, template_size, mode: str = "eval") -> ForwardOutput:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    return model(points, memory, template_size)
