"""Symlog scalar transforms, two-hot targets, and reward/termination losses.

Rewards and values are regressed as categorical distributions over a fixed
bucket grid in symlog space, which keeps training stable across magnitudes
without per-task reward scaling.
"""
from __future__ import annotations

import torch


def symlog(x: torch.Tensor) -> torch.Tensor:
    """sign(x) * ln(1 + |x|)."""
    return torch.sign(x) * torch.log1p(torch.abs(x))


def symexp(x: torch.Tensor) -> torch.Tensor:
    """Inverse of symlog: sign(x) * (exp(|x|) - 1)."""
    return torch.sign(x) * torch.expm1(torch.abs(x))


class SymlogBuckets:
    """Uniform bucket grid in symlog space with two-hot encoding.

    The default grid has 255 centers spanning [-20, 20], so the middle
    center sits exactly at zero.
    """

    def __init__(self, count: int = 255, low: float = -20.0, high: float = 20.0,
                 dtype: torch.dtype = torch.float32):
        if count < 2:
            raise ValueError("need at least two buckets")
        if not low < high:
            raise ValueError("bucket range must have low < high")
        self.count = count
        self.low = float(low)
        self.high = float(high)
        centers = torch.linspace(low, high, count, dtype=dtype)
        if count % 2 == 1 and low == -high:
            # build the odd symmetric grid from one half so the middle
            # center is exactly zero, not linspace's rounding of it
            pos = torch.linspace(0.0, high, count // 2 + 1, dtype=dtype)
            centers = torch.cat([-pos[1:].flip(0), pos])
        self.centers = centers

    def to(self, dtype: torch.dtype) -> "SymlogBuckets":
        return SymlogBuckets(self.count, self.low, self.high, dtype=dtype)

    def encode(self, values: torch.Tensor) -> torch.Tensor:
        """Two-hot encode raw values; output shape is values.shape + (count,).

        Weight splits linearly between the two centers bracketing
        symlog(value); values beyond the grid saturate at the end buckets.
        """
        centers = self.centers.to(values.dtype)
        v = symlog(values).clamp(self.low, self.high)
        # index of the last center <= v, clamped so idx+1 stays in range
        idx = torch.searchsorted(centers, v.detach().contiguous(), right=True) - 1
        idx = idx.clamp(0, self.count - 2)
        c_lo = centers[idx]
        c_hi = centers[idx + 1]
        w_hi = ((v - c_lo) / (c_hi - c_lo)).clamp(0.0, 1.0)
        target = torch.zeros(v.shape + (self.count,), dtype=values.dtype)
        target.scatter_(-1, idx.unsqueeze(-1), (1.0 - w_hi).unsqueeze(-1))
        target.scatter_add_(-1, (idx + 1).unsqueeze(-1), w_hi.unsqueeze(-1))
        return target

    def decode(self, logits: torch.Tensor) -> torch.Tensor:
        """Expected value under softmax(logits), mapped back through symexp."""
        probs = torch.softmax(logits, dim=-1)
        return self.decode_probs(probs)

    def decode_probs(self, probs: torch.Tensor) -> torch.Tensor:
        centers = self.centers.to(probs.dtype)
        return symexp((probs * centers).sum(dim=-1))


def categorical_cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """-sum(target * log_softmax(logits)) over the last axis."""
    return -(target * torch.log_softmax(logits, dim=-1)).sum(dim=-1)


def reward_loss(logits: torch.Tensor, rewards: torch.Tensor, buckets: SymlogBuckets) -> torch.Tensor:
    """Cross-entropy between predicted bucket logits and two-hot targets.

    Elementwise: logits (..., count), rewards (...) -> loss (...).
    """
    target = buckets.encode(rewards.detach()).to(logits.dtype)
    return categorical_cross_entropy(logits, target)


def termination_loss(prob: torch.Tensor, flag: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = prob.clamp(eps, 1.0 - eps)
    f = flag.to(p.dtype)
    return -(f * torch.log(p) + (1.0 - f) * torch.log1p(-p))
