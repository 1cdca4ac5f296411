"""Transformer primitives shared by the dynamics backbone and the token prior.

Blocks are post-LN: residual additions happen first, layer norm after, with
dropout on the attention output projection and at the end of the feed-forward
branch.  Attention is written out explicitly so the cached single-step path
computes exactly the same values as the full-sequence path.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .numerics import RngStream, dropout


class KvCache:
    """Per-layer key/value memory for incremental decoding."""

    def __init__(self, n_layers: int, max_len: int):
        self.n_layers = n_layers
        self.max_len = max_len
        self.keys: list[torch.Tensor | None] = [None] * n_layers
        self.values: list[torch.Tensor | None] = [None] * n_layers

    @property
    def length(self) -> int:
        return 0 if self.keys[0] is None else self.keys[0].shape[2]

    def append(self, layer: int, k: torch.Tensor, v: torch.Tensor):
        """Append new keys/values for one layer; returns the full memory."""
        if self.keys[layer] is None:
            self.keys[layer], self.values[layer] = k, v
        else:
            self.keys[layer] = torch.cat([self.keys[layer], k], dim=2)
            self.values[layer] = torch.cat([self.values[layer], v], dim=2)
        if self.keys[layer].shape[2] > self.max_len:
            raise ValueError(
                f"cache grew to {self.keys[layer].shape[2]} positions, max is {self.max_len}"
            )
        return self.keys[layer], self.values[layer]

    def detach_(self) -> "KvCache":
        for i in range(self.n_layers):
            if self.keys[i] is not None:
                self.keys[i] = self.keys[i].detach()
                self.values[i] = self.values[i].detach()
        return self


class SelfAttention(nn.Module):
    """Multi-head self-attention with optional causal masking and cache."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, causal: bool,
                cache: KvCache | None = None, layer: int = 0) -> torch.Tensor:
        b, t, _ = x.shape
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(x))
        v = self._split(self.v_proj(x))
        offset = 0
        if cache is not None:
            # this layer's own pre-append length; cache.length tracks layer 0,
            # which has already grown by the time deeper layers run
            prev = cache.keys[layer]
            offset = 0 if prev is None else prev.shape[2]
            k, v = cache.append(layer, k, v)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            t_k = k.shape[2]
            q_pos = torch.arange(offset, offset + t).unsqueeze(1)
            k_pos = torch.arange(t_k).unsqueeze(0)
            blocked = k_pos > q_pos
            scores = scores.masked_fill(blocked, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = attn @ v
        out = out.transpose(1, 2).reshape(b, t, self.dim)
        return self.out_proj(out)


class TransformerBlock(nn.Module):
    """Post-LN block: (attn -> drop -> +x -> LN) then (ffn -> drop -> +x -> LN)."""

    def __init__(self, dim: int, n_heads: int, dropout_p: float = 0.0, ffn_mult: int = 2):
        super().__init__()
        self.attn = SelfAttention(dim, n_heads)
        self.ln1 = nn.LayerNorm(dim)
        self.ffn_in = nn.Linear(dim, ffn_mult * dim)
        self.ffn_out = nn.Linear(ffn_mult * dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.dropout_p = dropout_p

    def forward(self, x: torch.Tensor, causal: bool, stream: RngStream | None = None,
                cache: KvCache | None = None, layer: int = 0) -> torch.Tensor:
        a = self.attn(x, causal=causal, cache=cache, layer=layer)
        a = dropout(a, self.dropout_p, stream, self.training)
        x = self.ln1(x + a)
        f = self.ffn_out(torch.relu(self.ffn_in(x)))
        f = dropout(f, self.dropout_p, stream, self.training)
        return self.ln2(x + f)


class PositionalEncoding(nn.Module):
    """Learnable additive position table followed by layer norm."""

    def __init__(self, max_len: int, dim: int):
        super().__init__()
        self.table = nn.Parameter(torch.zeros(max_len, dim))
        self.ln = nn.LayerNorm(dim)
        self.max_len = max_len

    def forward(self, x: torch.Tensor, offset: int = 0) -> torch.Tensor:
        t = x.shape[-2]
        if offset + t > self.max_len:
            raise ValueError(
                f"sequence of {t} at offset {offset} exceeds max context {self.max_len}"
            )
        return self.ln(x + self.table[offset:offset + t])
