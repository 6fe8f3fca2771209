"""Independent oracles shared by the test modules."""

from __future__ import annotations

import math

import numpy as np
import torch


def inside_box_oracle(pts: np.ndarray, box) -> np.ndarray:
    """Point-in-oriented-box by explicit inverse rotation; shares no code with the package."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    w = pts[:, 2] - box.cz
    return (np.abs(u) <= box.l / 2) & (np.abs(v) <= box.w / 2) & (np.abs(w) <= box.h / 2)


def _aabb(box):
    c, s = abs(math.cos(box.yaw)), abs(math.sin(box.yaw))
    ex = c * box.l / 2 + s * box.w / 2
    ey = s * box.l / 2 + c * box.w / 2
    return np.array([box.cx - ex, box.cy - ey, box.cz - box.h / 2]), np.array([box.cx + ex, box.cy + ey, box.cz + box.h / 2])


def monte_carlo_iou(a, b, n: int = 1_000_000, seed: int = 0) -> float:
    """IoU from uniform samples over the overlap of the two boxes' bounding boxes."""
    lo_a, hi_a = _aabb(a)
    lo_b, hi_b = _aabb(b)
    lo, hi = np.maximum(lo_a, lo_b), np.minimum(hi_a, hi_b)
    if np.any(hi <= lo):
        return 0.0
    rng = np.random.default_rng(seed)
    pts = lo + rng.random((n, 3)) * (hi - lo)
    frac = np.mean(inside_box_oracle(pts, a) & inside_box_oracle(pts, b))
    inter = frac * float(np.prod(hi - lo))
    va, vb = a.w * a.l * a.h, b.w * b.l * b.h
    return inter / (va + vb - inter)


def module_groups(module: torch.nn.Module) -> dict[str, list[torch.Tensor]]:
    """Parameters grouped by owning layer (weight and bias together).

    A key bias in front of a softmax has an exactly zero gradient, so error is
    judged per layer rather than per tensor.
    """
    groups: dict[str, list[torch.Tensor]] = {}
    for name, p in module.named_parameters():
        groups.setdefault(name.rsplit(".", 1)[0] if "." in name else name, []).append(p)
    return groups


def finite_difference_check(fn, groups: dict[str, list[torch.Tensor]], eps: float = 1e-6) -> dict[str, float]:
    """Relative error between autograd and central differences for each group of tensors.

    ``fn`` returns a scalar tensor. Errors are ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)
    over the concatenation of the group's tensors.
    """
    names = list(groups)
    flat_params = [p for n in names for p in groups[n]]
    grads = torch.autograd.grad(fn(), flat_params, allow_unused=True)
    auto = {}
    it = iter(grads)
    for n in names:
        auto[n] = [torch.zeros_like(p) if (g := next(it)) is None else g for p in groups[n]]
    out = {}
    with torch.no_grad():
        for n in names:
            g_auto, g_num = [], []
            for p, g in zip(groups[n], auto[n]):
                num = torch.zeros(p.numel(), dtype=p.dtype)
                flat = p.data.view(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + eps
                    fp = fn().item()
                    flat[i] = orig - eps
                    fm = fn().item()
                    flat[i] = orig
                    num[i] = (fp - fm) / (2 * eps)
                g_auto.append(g.reshape(-1))
                g_num.append(num)
            a, b = torch.cat(g_auto), torch.cat(g_num)
            denom = max(a.norm().item(), b.norm().item())
            out[n] = 0.0 if denom == 0 else (a - b).norm().item() / denom
    return out
