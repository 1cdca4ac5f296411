"""Masked-token dynamics prior with iterative draft-and-revise decoding.

The prior predicts the next frame's 32 latent tokens from the current hidden
state.  Training masks a random subset of the target tokens (bit 1 = masked
at the input and included in the KL); decoding fills an empty canvas in a
small number of grouped refinement passes instead of one token at a time.

Mask bit convention, used everywhere in this module: 1 means the position is
replaced by the mask embedding at the prior input and counted in the KL
losses; 0 means the true token is visible and the position is excluded from
the loss.
"""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .codec import N_CLASSES, N_TOKENS
from .numerics import RngStream, categorical_sample
from .transformer import PositionalEncoding, TransformerBlock


def mask_fraction(t: float) -> float:
    """Cosine schedule gamma(t) = cos(pi t / 2) for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"schedule time {t} outside [0, 1]")
    return math.cos(math.pi * t / 2.0)


def sample_mask_count(stream: RngStream, n_tokens: int = N_TOKENS) -> int:
    """Draw t ~ U[0,1) and return M = ceil(gamma(t) * n) in {1, ..., n}."""
    t = float(stream.uniform(()))
    return int(math.ceil(mask_fraction(t) * n_tokens))


def sample_training_mask(stream: RngStream, shape=(), n_tokens: int = N_TOKENS) -> np.ndarray:
    """Sample masks with cosine-scheduled counts; bit 1 = masked.

    Each mask in the batch gets its own count M and its own positions,
    chosen uniformly without replacement.
    """
    lead = tuple(shape)
    out = np.zeros(lead + (n_tokens,), dtype=np.uint8)
    flat = out.reshape(-1, n_tokens)
    for row in flat:
        m = sample_mask_count(stream, n_tokens)
        row[stream.choice(n_tokens, size=m, replace=False)] = 1
    return out


def sample_partition(stream: RngStream, n_parts: int, batch_shape=(),
                     n_tokens: int = N_TOKENS) -> np.ndarray:
    """Partition token positions into n_parts disjoint groups per batch entry.

    Returns uint8 masks of shape (n_parts,) + batch_shape + (n_tokens,), one
    bit set per position across the group axis; group sizes differ by at most
    one.  A single-part partition is deterministic and consumes no draws.
    """
    if not 1 <= n_parts <= n_tokens:
        raise ValueError(f"need 1 <= parts <= {n_tokens}, got {n_parts}")
    lead = tuple(batch_shape)
    if n_parts == 1:
        return np.ones((1,) + lead + (n_tokens,), dtype=np.uint8)
    ranks = np.argsort(stream.uniform(lead + (n_tokens,)), axis=-1).argsort(axis=-1)
    base = n_tokens // n_parts
    extra = n_tokens % n_parts
    sizes = [base + (1 if i < extra else 0) for i in range(n_parts)]
    bounds = np.cumsum([0] + sizes)
    groups = np.stack(
        [(ranks >= bounds[i]) & (ranks < bounds[i + 1]) for i in range(n_parts)]
    ).astype(np.uint8)
    return groups


class MaskGitPrior(nn.Module):
    """Bidirectional transformer over [hidden, 32 target tokens].

    Token classes share one embedding table E for input embedding and output
    logits (logits_i = xi_i @ E^T).  Masked input positions are replaced by a
    learned mask embedding; the conditioning hidden state is projected into
    the token width and prepended to the sequence.
    """

    def __init__(self, cond_dim: int, width: int = 128, n_layers: int = 4,
                 n_heads: int = 8, dropout_p: float = 0.0):
        super().__init__()
        self.width = width
        self.class_embed = nn.Parameter(torch.zeros(N_CLASSES, width))
        self.mask_embed = nn.Parameter(torch.zeros(1, width))
        self.cond_proj = nn.Linear(cond_dim, width)
        self.pos = PositionalEncoding(1 + N_TOKENS, width)
        self.blocks = nn.ModuleList(
            TransformerBlock(width, n_heads, dropout_p) for _ in range(n_layers)
        )

    def forward(self, hidden: torch.Tensor, tokens: torch.Tensor,
                mask: torch.Tensor, stream: RngStream | None = None) -> torch.Tensor:
        """Predict per-position class logits.

        hidden (..., D); tokens either int64 indices (..., 32) or one-hot
        floats (..., 32, 32); mask (..., 32) with 1 = masked.  Returns
        logits (..., 32, 32).
        """
        lead = hidden.shape[:-1]
        if tokens.dtype.is_floating_point:
            if tokens.shape[-2:] != (N_TOKENS, N_CLASSES):
                raise ValueError(f"bad one-hot token shape {tuple(tokens.shape)}")
            tok = tokens.reshape((-1, N_TOKENS, N_CLASSES)) @ self.class_embed
        else:
            tok = self.class_embed[tokens.reshape((-1, N_TOKENS))]
        m = mask.reshape((-1, N_TOKENS, 1)).to(tok.dtype)
        tok = (1.0 - m) * tok + m * self.mask_embed
        cond = self.cond_proj(hidden.reshape((-1, hidden.shape[-1]))).unsqueeze(1)
        x = self.pos(torch.cat([cond, tok], dim=1))
        for i, block in enumerate(self.blocks):
            x = block(x, causal=False, stream=stream, layer=i)
        logits = x[:, 1:] @ self.class_embed.T
        return logits.reshape(lead + (N_TOKENS, N_CLASSES))


class MlpPrior(nn.Module):
    """Ablation prior: an MLP on the hidden state alone.

    Keeps the MaskGitPrior call signature; tokens and mask are ignored, so
    every position is predicted independently of its neighbours.
    """

    def __init__(self, cond_dim: int, hidden: int | None = None):
        super().__init__()
        h = hidden or cond_dim
        self.net = nn.Sequential(
            nn.Linear(cond_dim, h), nn.ReLU(),
            nn.Linear(h, h), nn.ReLU(),
            nn.Linear(h, N_TOKENS * N_CLASSES),
        )

    def forward(self, hidden: torch.Tensor, tokens=None, mask=None,
                stream: RngStream | None = None) -> torch.Tensor:
        lead = hidden.shape[:-1]
        logits = self.net(hidden.reshape((-1, hidden.shape[-1])))
        return logits.reshape(lead + (N_TOKENS, N_CLASSES))


def masked_kl(q_probs: torch.Tensor, p_logits: torch.Tensor, mask: torch.Tensor,
              floor: float = 1.0) -> torch.Tensor:
    """KL[q || p] per token, averaged over masked positions, clamped below.

    q_probs and p_logits have shape (..., 32, 32); mask (..., 32) with 1
    marking positions that count.  The per-element average is clamped at
    ``floor`` (free bits); when no position counts the result is exactly the
    floor, with zero gradient.
    """
    logq = torch.log(q_probs)
    logp = torch.log_softmax(p_logits, dim=-1)
    kl_tok = (q_probs * (logq - logp)).sum(dim=-1)
    m = mask.to(kl_tok.dtype)
    total = (kl_tok * m).sum(dim=-1)
    count = m.sum(dim=-1)
    avg = total / count.clamp(min=1.0)
    return avg.clamp(min=floor)


def kl_dyn_loss(post_probs: torch.Tensor, prior_logits: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
    """Dynamics KL: the posterior is held fixed, gradients train the prior."""
    return masked_kl(post_probs.detach(), prior_logits, mask)


def kl_rep_loss(post_probs: torch.Tensor, prior_logits: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
    """Representation KL: the prior is held fixed, gradients shape the posterior."""
    return masked_kl(post_probs, prior_logits.detach(), mask)


def draft_and_revise(prior: nn.Module, hidden: torch.Tensor, stream: RngStream,
                     t_draft: int = 1, t_revise: int = 1, repetitions: int = 1,
                     temperature: float = 1.0) -> torch.Tensor:
    """Sample next-step tokens by grouped iterative decoding.

    Draft: starting from an all-masked canvas, fill the positions of a random
    t_draft-group partition one group at a time, each group conditioned on
    everything filled so far.  Revise: ``repetitions`` times, draw a fresh
    t_revise-group partition and resample each group conditioned on all other
    positions.  Returns one-hot samples (..., 32, 32); with t_draft=1 and
    repetitions=0 this is exactly one full-mask forward and one sample per
    position.
    """
    if t_draft < 1:
        raise ValueError(f"t_draft must be >= 1, got {t_draft}")
    if t_revise < 1:
        raise ValueError(f"t_revise must be >= 1, got {t_revise}")
    if repetitions < 0:
        raise ValueError(f"repetitions must be >= 0, got {repetitions}")
    lead = hidden.shape[:-1]
    flat_h = hidden.detach().reshape((-1, hidden.shape[-1]))
    b = flat_h.shape[0]
    tokens = torch.zeros((b, N_TOKENS), dtype=torch.int64)
    filled = torch.zeros((b, N_TOKENS), dtype=torch.bool)

    def update(group: torch.Tensor) -> None:
        nonlocal tokens
        visible = filled & ~group
        input_mask = ~visible
        logits = prior(flat_h, tokens, input_mask)
        probs = torch.softmax(logits.detach() / temperature, dim=-1)
        idx = categorical_sample(probs, stream)
        tokens = torch.where(group, idx, tokens)
        filled.copy_(filled | group)

    for group in sample_partition(stream, t_draft, batch_shape=(b,)):
        update(torch.from_numpy(group.astype(bool)))
    for _ in range(repetitions):
        for group in sample_partition(stream, t_revise, batch_shape=(b,)):
            update(torch.from_numpy(group.astype(bool)))
    onehot = torch.nn.functional.one_hot(tokens, N_CLASSES).to(hidden.dtype)
    return onehot.reshape(lead + (N_TOKENS, N_CLASSES))


def prior_token_log_probs(prior: nn.Module, hidden: torch.Tensor,
                          target_tokens: torch.Tensor) -> torch.Tensor:
    """Teacher-forced log-probabilities of true tokens under the full mask.

    hidden (..., D), target_tokens int64 (..., 32) -> log-probs (..., 32).
    Every position is masked, so the prediction uses the hidden state alone.
    """
    mask = torch.ones(target_tokens.shape, dtype=torch.bool)
    logits = prior(hidden, target_tokens, mask)
    logp = torch.log_softmax(logits, dim=-1)
    return logp.gather(-1, target_tokens.unsqueeze(-1)).squeeze(-1)
