"""Transformer layer blocks: relative-pose-aware memory, base-expansion
cross-attention and contextual-point self-attention."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig
from .ops import FFN, EdgeConv, attend, farthest_point_sample, gather, knn


class HeadNorm(nn.Module):
    """LayerNorm applied separately to each head's slice."""

    def __init__(self, heads: int, head_dim: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(head_dim)

    def forward(self, x):
        B, n, c = x.shape
        return self.norm(x.view(B, n, self.heads, c // self.heads)).view(B, n, c)


class _Residual(nn.Module):
    """x + drop(out(attn)); then x + drop(FFN(LN(x)))."""

    def __init__(self, c: int, p: float):
        super().__init__()
        self.out = nn.Linear(c, c)
        self.norm = nn.LayerNorm(c)
        self.ffn = FFN(c)
        self.drop = nn.Dropout(p)

    def forward(self, x, attn_out):
        x = x + self.drop(self.out(attn_out))
        return x + self.drop(self.ffn(self.norm(x)))


@dataclass
class AttentionBundle:
    base: torch.Tensor   # (B, heads, N, kN)
    expan: torch.Tensor  # (B, heads, N, kN / ratio)

    @property
    def base_map(self) -> torch.Tensor:
        return self.base.mean(1)

    @property
    def expan_map(self) -> torch.Tensor:
        return self.expan.mean(1)


class RPM(nn.Module):
    """Template features from the layer, mask and observation-angle banks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.heads = cfg.heads
        self.use_om = cfg.use_om
        self.proj = nn.Linear(c + 3, c)
        self.norm_t = nn.LayerNorm(c)
        self.q = nn.Linear(c, c)
        self.k = nn.Linear(c, c)
        self.v = nn.Linear(c, c)
        self.pe = nn.Linear(3, c)
        self.norm_q = nn.LayerNorm(c)
        self.block = _Residual(c, cfg.dropout_rate)

    def template(self, lm, mm, om):
        """lm (B, k, N, C), mm (B, k, N), om (B, k, 2) -> T (B, kN, C)."""
        B, k, n, c = lm.shape
        if not self.use_om:
            om = torch.zeros_like(om)
        t = torch.cat([lm, mm.unsqueeze(-1), om.unsqueeze(2).expand(B, k, n, 2)], dim=-1)
        return self.proj(t).reshape(B, k * n, c)

    def forward(self, lm, mm, om, coords):
        if lm.shape[1] < 1:
            raise ValueError("memory is empty; initialise the track first")
        B = lm.shape[0]
        t = self.template(lm, mm, om)
        tn = self.norm_t(t)
        q = self.norm_q(self.q(tn) + self.pe(coords.reshape(B, -1, 3)))
        o, attn = attend(q, self.k(tn), self.v(tn), self.heads)
        return self.block(t, o), attn


class BEA(nn.Module):
    """Cross-attention from search features to the template at two scales.

    Half the heads attend to the template points directly; the other half to
    a 1/ratio downsampled template whose features pool each seed's
    ``expansion_k`` nearest template points through an EdgeConv. With
    ``use_bea`` off every head uses the base branch.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, h, d = cfg.channels, cfg.heads, cfg.head_dim
        self.heads = h
        self.vanilla = not cfg.use_bea
        self.ratio = cfg.expansion_ratio
        self.expansion_k = cfg.expansion_k
        self.norm_x = nn.LayerNorm(c)
        self.norm_m = nn.LayerNorm(c)
        self.pe = nn.Linear(3, c)
        if self.vanilla:
            self.q = nn.Linear(c, c)
            self.k = nn.Linear(c, c)
            self.v = nn.Linear(c, c)
            self.norm_q = HeadNorm(h, d)
        else:
            half = c // 2
            self.q_base = nn.Linear(c, half)
            self.k_base = nn.Linear(c, half)
            self.v_base = nn.Linear(c, half)
            self.norm_q_base = HeadNorm(h // 2, d)
            self.edge = EdgeConv(c, c)
            self.norm_e = nn.LayerNorm(c)
            self.q_exp = nn.Linear(c, half)
            self.k_exp = nn.Linear(c, half)
            self.v_exp = nn.Linear(c, half)
            self.norm_q_exp = HeadNorm(h // 2, d)
        self.block = _Residual(c, cfg.dropout_rate)

    def expand(self, mem, mem_xyz):
        """Downsample the template to kN/ratio points with wider receptive fields."""
        m = mem.shape[1] // self.ratio
        seeds = farthest_point_sample(mem_xyz, m)
        nbr = knn(gather(mem_xyz, seeds), mem_xyz, self.expansion_k)
        return self.edge(gather(mem, seeds), gather(mem, nbr))

    def forward(self, x, xyz, mem, mem_xyz):
        """x (B, N, C), xyz (B, N, 3), mem (B, kN, C), mem_xyz (B, kN, 3)."""
        if mem.shape[1] % self.ratio:
            raise ValueError(f"template length {mem.shape[1]} not divisible by {self.ratio}")
        if mem.shape[:2] != mem_xyz.shape[:2] or x.shape[:2] != xyz.shape[:2]:
            raise ValueError("feature / coordinate shapes disagree")
        xn, mn, pe = self.norm_x(x), self.norm_m(mem), self.pe(xyz)
        if self.vanilla:
            q = self.norm_q(self.q(xn) + pe)
            o, a = attend(q, self.k(mn), self.v(mn), self.heads)
            B, h, n, km = a.shape
            # pooled so CPA still gets a row-stochastic map of the expanded length
            a_exp = a.view(B, h, n, km // self.ratio, self.ratio).sum(-1)
            return self.block(x, o), AttentionBundle(a, a_exp)
        pe_b, pe_e = pe.chunk(2, dim=-1)
        hh = self.heads // 2
        qb = self.norm_q_base(self.q_base(xn) + pe_b)
        ob, ab = attend(qb, self.k_base(mn), self.v_base(mn), hh)
        me = self.norm_e(self.expand(mem, mem_xyz))
        qe = self.norm_q_exp(self.q_exp(xn) + pe_e)
        oe, ae = attend(qe, self.k_exp(me), self.v_exp(me), hh)
        return self.block(x, torch.cat([ob, oe], dim=-1)), AttentionBundle(ab, ae)


def importance(bundle: AttentionBundle) -> torch.Tensor:
    """Per search point (B, N): peak attention weight, averaged over heads, summed over both scales.

    Softmax rows sum to one, so their mean is the same for every point; the
    row maximum is used instead as the per-point strength of template response.
    """
    return bundle.base.amax(-1).mean(1) + bundle.expan.amax(-1).mean(1)


class CPA(nn.Module):
    """Self-attention whose keys/values are importance-allocated cluster aggregates."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.channels
        self.heads = cfg.heads
        self.vanilla = not cfg.use_cpa
        self.group_sizes = cfg.group_sizes
        self.counts = cfg.contextual_counts
        # one weight per cluster member, shared across channels and clusters of a group
        self.agg = nn.ParameterList(
            [nn.Parameter(torch.full((g // u,), u / g)) for g, u in zip(self.group_sizes, self.counts)]
        )
        self.norm_q = nn.LayerNorm(c)
        self.norm_kv = nn.LayerNorm(c)
        self.q = nn.Linear(c, c)
        self.k = nn.Linear(c, c)
        self.v = nn.Linear(c, c)
        self.block = _Residual(c, cfg.dropout_rate)

    def order(self, imp: torch.Tensor) -> torch.Tensor:
        return torch.sort(imp, dim=1, descending=True, stable=True).indices

    def contextual_points(self, x, imp):
        """(B, U, C) contextual points, most important group first, plus the sort order."""
        order = self.order(imp)
        xs = gather(x, order)
        B, _, c = xs.shape
        out, start = [], 0
        for g, u, w in reversed(list(zip(self.group_sizes, self.counts, self.agg))):
            grp = xs[:, start:start + g].reshape(B, u, g // u, c)
            out.append(torch.einsum("bumc,m->buc", grp, w))
            start += g
        return torch.cat(out, dim=1), order

    def forward(self, x, bundle: AttentionBundle | None = None):
        if self.vanilla:
            kv = self.norm_kv(x)
        else:
            if bundle is None:
                raise ValueError("CPA needs the cross-attention maps")
            if x.shape[1] != sum(self.group_sizes):
                raise ValueError(f"CPA expects {sum(self.group_sizes)} points, got {x.shape[1]}")
            ctx, _ = self.contextual_points(x, importance(bundle))
            kv = self.norm_kv(ctx)
        o, attn = attend(self.q(self.norm_q(x)), self.k(kv), self.v(kv), self.heads)
        return self.block(x, o), attn


class TransformerLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.rpm = RPM(cfg)
        self.bea = BEA(cfg)
        self.cpa = CPA(cfg)
