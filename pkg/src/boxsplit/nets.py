"""Transformer building blocks for unordered box sets.

All set encoders sort tokens internally by their raw feature bytes and restore
the caller's order on output. Attention math is permutation-equivariant only
up to float summation order; the canonical ordering makes the equivariance
bit-exact, which the public model contracts require.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


def canonical_perm(keys: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-row lexicographic sort order of (B, n, K) keys; padded slots last.

    Returns (perm, inv) index tensors of shape (B, n).
    """
    k = keys.detach().cpu().numpy().astype(np.float64, copy=True)
    if mask is not None:
        k[~mask.detach().cpu().numpy()] = np.inf
    B, n, _ = k.shape
    perm = np.empty((B, n), dtype=np.int64)
    for b in range(B):
        # lexsort sorts by the last key first; feed columns reversed
        perm[b] = np.lexsort(k[b].T[::-1])
    perm_t = torch.from_numpy(perm)
    inv = torch.argsort(perm_t, dim=1)
    return perm_t, inv


def apply_perm(x: torch.Tensor, perm: torch.Tensor) -> torch.Tensor:
    """Gather rows of (B, n, ...) by a (B, n) index tensor."""
    idx = perm
    while idx.dim() < x.dim():
        idx = idx.unsqueeze(-1)
    return torch.gather(x, 1, idx.expand(x.shape))


class SinusoidalEmbedding(nn.Module):
    """Classic sin/cos timestep features followed by a 2-layer MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float32) / half)
        args = t.float().reshape(-1, 1) * freqs.reshape(1, -1)
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
        if emb.shape[-1] < self.dim:
            emb = torch.cat([emb, torch.zeros(emb.shape[0], self.dim - emb.shape[-1])], dim=-1)
        return self.mlp(emb)


def _mlp(dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))


class SelfAttentionBlock(nn.Module):
    """Pre-LN self-attention + MLP."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = _mlp(dim)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h, key_padding_mask=key_padding_mask, need_weights=False)[0]
        return x + self.mlp(self.ln2(x))


class AdaLNSelfAttentionBlock(nn.Module):
    """DiT-style block: LayerNorm modulation + gating driven by a condition vector.

    The modulation projection is zero-initialized so the block starts as a plain
    pre-LN transformer block with zero gates (identity function).
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.mlp = _mlp(dim)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(dim, 6 * dim))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor, key_padding_mask=None) -> torch.Tensor:
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = self.modulation(cond).unsqueeze(1).chunk(6, dim=-1)
        h = self.ln1(x) * (1 + scale_a) + shift_a
        x = x + gate_a * self.attn(h, h, h, key_padding_mask=key_padding_mask, need_weights=False)[0]
        h = self.ln2(x) * (1 + scale_m) + shift_m
        return x + gate_m * self.mlp(h)


class CrossAttentionBlock(nn.Module):
    """Self-attention over queries, cross-attention into a context latent, MLP."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln3 = nn.LayerNorm(dim)
        self.mlp = _mlp(dim)

    def forward(self, x, context, context_padding_mask=None):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, h, need_weights=False)[0]
        h = self.ln2(x)
        x = x + self.cross_attn(h, context, context, key_padding_mask=context_padding_mask, need_weights=False)[0]
        return x + self.mlp(self.ln3(x))


def lengths_to_mask(lengths: torch.Tensor, n: int) -> torch.Tensor:
    """(B,) lengths -> (B, n) bool mask, True for real slots."""
    return torch.arange(n).unsqueeze(0) < lengths.unsqueeze(1)
