"""Sequence model over latent/action tokens plus reward and termination heads.

Each step's latent sample and action are mixed into a single token; a causal
transformer turns token prefixes into hidden states that condition the token
prior and the scalar heads.
"""
from __future__ import annotations

import torch
from torch import nn

from .codec import LATENT_WIDTH, N_TOKENS, N_CLASSES
from .numerics import RngStream
from .transformer import KvCache, PositionalEncoding, SelfAttention, TransformerBlock


def encode_action(actions: torch.Tensor, kind: str, dim: int) -> torch.Tensor:
    """Map raw actions to fixed-width vectors.

    Discrete actions (int64 indices) become one-hot vectors; continuous
    actions pass through clamped to [-1, 1].
    """
    if kind == "discrete":
        idx = actions.to(torch.int64)
        if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= dim):
            raise ValueError(f"discrete action outside [0, {dim})")
        return torch.nn.functional.one_hot(idx, dim).to(torch.get_default_dtype())
    if kind == "continuous":
        if actions.shape[-1] != dim:
            raise ValueError(f"expected (..., {dim}) continuous actions, got {tuple(actions.shape)}")
        return actions.clamp(-1.0, 1.0)
    raise ValueError(f"unknown action kind {kind!r}")


class StateMixer(nn.Module):
    """Fuse one latent sample with one action vector into a D-dim token.

    mode "concat" flattens the tokens and concatenates the action before a
    two-layer MLP.  The attention variants treat the 32 latent tokens and the
    action as a short sequence: "concat-attention" self-attends over all 33
    entries and mean-pools, "cross-attention" lets a single action query
    attend over the latent tokens.
    """

    MODES = ("concat", "concat-attention", "cross-attention")

    def __init__(self, action_dim: int, dim: int, mode: str = "concat", n_heads: int = 8):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"unknown mixer mode {mode!r}, expected one of {self.MODES}")
        self.mode = mode
        self.dim = dim
        self.action_dim = action_dim
        if mode == "concat":
            self.fc1 = nn.Linear(LATENT_WIDTH + action_dim, dim)
            self.ln1 = nn.LayerNorm(dim)
            self.fc2 = nn.Linear(dim, dim)
            self.ln2 = nn.LayerNorm(dim)
        else:
            self.token_proj = nn.Linear(N_CLASSES, dim)
            self.action_proj = nn.Linear(action_dim, dim)
            self.attn = SelfAttention(dim, n_heads)
            self.ln = nn.LayerNorm(dim)
            self.out = nn.Linear(dim, dim)

    def forward(self, latent: torch.Tensor, action_vec: torch.Tensor) -> torch.Tensor:
        """latent (..., 32, 32) one-hot/probs, action_vec (..., A) -> (..., D)."""
        lead = latent.shape[:-2]
        if action_vec.shape[:-1] != lead:
            raise ValueError("latent and action batch shapes disagree")
        if self.mode == "concat":
            flat = latent.reshape(lead + (LATENT_WIDTH,))
            x = torch.cat([flat, action_vec], dim=-1)
            x = self.ln1(self.fc1(x)).relu()
            return self.ln2(self.fc2(x))
        toks = self.token_proj(latent.reshape((-1, N_TOKENS, N_CLASSES)))
        act = self.action_proj(action_vec.reshape((-1, 1, self.action_dim)))
        if self.mode == "concat-attention":
            seq = torch.cat([toks, act], dim=1)
            mixed = self.ln(seq + self.attn(seq, causal=False)).mean(dim=1)
        else:
            seq = torch.cat([act, toks], dim=1)
            mixed = self.ln(seq + self.attn(seq, causal=False))[:, 0]
        return self.out(mixed).reshape(lead + (self.dim,))


class MlpHead(nn.Module):
    """Three-layer MLP head with ReLU between layers."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc3(torch.relu(self.fc2(torch.relu(self.fc1(x)))))


class DynamicsBackbone(nn.Module):
    """Causal transformer over mixed tokens with an incremental-decoding cache.

    forward_sequence consumes (B, T, D) tokens and returns hidden states of
    the same shape; pass a KvCache to continue a rollout one step at a time
    with identical results to recomputing the full prefix.
    """

    def __init__(self, dim: int, n_layers: int, n_heads: int, dropout_p: float, max_context: int):
        super().__init__()
        self.dim = dim
        self.n_layers = n_layers
        self.max_context = max_context
        self.pos = PositionalEncoding(max_context, dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, n_heads, dropout_p) for _ in range(n_layers)
        )
        self.forward_calls = 0
        self.tokens_processed = 0

    def make_cache(self) -> KvCache:
        return KvCache(self.n_layers, self.max_context)

    def forward_sequence(self, tokens: torch.Tensor, cache: KvCache | None = None,
                         stream: RngStream | None = None) -> torch.Tensor:
        if tokens.ndim != 3 or tokens.shape[-1] != self.dim:
            raise ValueError(f"expected (B, T, {self.dim}) tokens, got {tuple(tokens.shape)}")
        offset = cache.length if cache is not None else 0
        x = self.pos(tokens, offset=offset)
        for i, block in enumerate(self.blocks):
            x = block(x, causal=True, stream=stream, cache=cache, layer=i)
        self.forward_calls += 1
        self.tokens_processed += tokens.shape[0] * tokens.shape[1]
        return x
