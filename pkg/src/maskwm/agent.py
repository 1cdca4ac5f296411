"""Actor-critic trained on imagined trajectories.

Policies act on the agent state (flattened latent sample concatenated with
the sequence hidden state).  Values and return targets use the same symlog
two-hot machinery as the reward head; advantages are scaled by a running
percentile range of the return batch so entropy regularisation keeps a
consistent strength across reward scales.
"""
from __future__ import annotations

import copy
import math

import numpy as np
import torch
from torch import nn

from .backbone import MlpHead
from .losses import SymlogBuckets, categorical_cross_entropy
from .numerics import RngStream, categorical_sample, stream_tensor

LOG_STD_RANGE = (-5.0, 2.0)


class Actor(nn.Module):
    """Stochastic policy head; discrete (softmax) or continuous (squashed Gaussian)."""

    def __init__(self, state_dim: int, hidden: int, action_kind: str, action_dim: int):
        super().__init__()
        self.action_kind = action_kind
        self.action_dim = action_dim
        out = action_dim if action_kind == "discrete" else 2 * action_dim
        self.net = MlpHead(state_dim, hidden, out)

    def _gauss_params(self, state: torch.Tensor):
        raw = self.net(state)
        mean, raw_std = raw.chunk(2, dim=-1)
        lo, hi = LOG_STD_RANGE
        log_std = lo + (hi - lo) * (torch.tanh(raw_std) + 1.0) / 2.0
        return mean, log_std

    def sample(self, state: torch.Tensor, stream: RngStream):
        """Draw actions; returns (env_action, raw_action).

        For discrete policies both are the int64 index.  For continuous ones
        env_action = tanh(raw_action); the raw pre-squash draw is what
        log_prob needs, so trajectories store it alongside.
        """
        if self.action_kind == "discrete":
            probs = torch.softmax(self.net(state), dim=-1)
            idx = categorical_sample(probs.detach(), stream)
            return idx, idx
        mean, log_std = self._gauss_params(state)
        eps = stream_tensor(stream, tuple(mean.shape), "normal", dtype=mean.dtype)
        raw = (mean + torch.exp(log_std) * eps).detach()
        return torch.tanh(raw), raw

    def log_prob(self, state: torch.Tensor, raw_action: torch.Tensor) -> torch.Tensor:
        if self.action_kind == "discrete":
            logp = torch.log_softmax(self.net(state), dim=-1)
            return logp.gather(-1, raw_action.unsqueeze(-1).to(torch.int64)).squeeze(-1)
        mean, log_std = self._gauss_params(state)
        var = torch.exp(2.0 * log_std)
        gauss = -0.5 * (((raw_action - mean) ** 2) / var + 2.0 * log_std + math.log(2 * math.pi))
        squash = torch.log(1.0 - torch.tanh(raw_action) ** 2 + 1e-6)
        return (gauss - squash).sum(dim=-1)

    def entropy(self, state: torch.Tensor) -> torch.Tensor:
        if self.action_kind == "discrete":
            logp = torch.log_softmax(self.net(state), dim=-1)
            return -(logp.exp() * logp).sum(dim=-1)
        _, log_std = self._gauss_params(state)
        return (0.5 * math.log(2 * math.pi * math.e) + log_std).sum(dim=-1)


class Critic(nn.Module):
    """Bucketed value head over agent states."""

    def __init__(self, state_dim: int, hidden: int, buckets: SymlogBuckets):
        super().__init__()
        self.net = MlpHead(state_dim, hidden, buckets.count)
        self.buckets = buckets

    def logits(self, state: torch.Tensor) -> torch.Tensor:
        return self.net(state)

    def value(self, state: torch.Tensor) -> torch.Tensor:
        return self.buckets.decode(self.net(state))


def make_ema_critic(critic: Critic) -> Critic:
    ema = copy.deepcopy(critic)
    for p in ema.parameters():
        p.requires_grad_(False)
    return ema


def ema_update(live: nn.Module, ema: nn.Module, decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * live, elementwise; decay 1 freezes."""
    with torch.no_grad():
        for p_ema, p in zip(ema.parameters(), live.parameters()):
            p_ema.mul_(decay).add_(p, alpha=1.0 - decay)
        for b_ema, b in zip(ema.buffers(), live.buffers()):
            b_ema.copy_(b)


class ReturnNormalizer:
    """Running percentile range of return batches; divisor is max(1, S)."""

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self.s = 0.0

    def update(self, returns: torch.Tensor) -> float:
        vals = returns.detach().reshape(-1).to(torch.float64).numpy()
        span = float(np.percentile(vals, 95) - np.percentile(vals, 5))
        self.s = self.decay * self.s + (1.0 - self.decay) * span
        return self.s

    @property
    def scale(self) -> float:
        return max(1.0, self.s)

    def state(self) -> dict:
        return {"decay": self.decay, "s": self.s}

    def load_state(self, state: dict) -> None:
        self.decay = state["decay"]
        self.s = state["s"]


def lambda_returns(rewards: torch.Tensor, continues: torch.Tensor,
                   values: torch.Tensor, discount: float, lam: float) -> torch.Tensor:
    """Bootstrapped lambda-returns.

    rewards and continues have shape (..., L); values (..., L+1) including
    the bootstrap value after the last step.  Returns (..., L) with
    G_l = r_l + discount * c_l * ((1 - lam) * V_{l+1} + lam * G_{l+1})
    and G_{L+1} = V_{L+1}.
    """
    if values.shape[-1] != rewards.shape[-1] + 1:
        raise ValueError("values must have one more step than rewards")
    horizon = rewards.shape[-1]
    out = torch.zeros_like(rewards)
    nxt = values[..., -1]
    for l in range(horizon - 1, -1, -1):
        blend = (1.0 - lam) * values[..., l + 1] + lam * nxt
        nxt = rewards[..., l] + discount * continues[..., l] * blend
        out[..., l] = nxt
    return out


def critic_loss(critic: Critic, ema_critic: Critic, states: torch.Tensor,
                targets: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Two-hot CE toward the return targets plus a pull toward the EMA critic."""
    logits = critic.logits(states)
    with torch.no_grad():
        ema_values = ema_critic.value(states)
    t_ret = critic.buckets.encode(targets.detach()).to(logits.dtype)
    t_ema = critic.buckets.encode(ema_values).to(logits.dtype)
    per = categorical_cross_entropy(logits, t_ret) + categorical_cross_entropy(logits, t_ema)
    w = weights.to(per.dtype)
    return (per * w).sum() / w.sum().clamp(min=1.0)


def actor_loss(actor: Actor, states: torch.Tensor, raw_actions: torch.Tensor,
               returns: torch.Tensor, values: torch.Tensor, scale: float,
               entropy_coeff: float, weights: torch.Tensor) -> torch.Tensor:
    """REINFORCE with normalised advantages and an entropy bonus.

    returns and values are treated as constants; only the log-probability
    and entropy terms carry gradient, so the world model and critic stay
    untouched by this loss.
    """
    adv = ((returns - values) / scale).detach()
    logp = actor.log_prob(states, raw_actions)
    ent = actor.entropy(states)
    per = -adv * logp - entropy_coeff * ent
    w = weights.to(per.dtype)
    return (per * w).sum() / w.sum().clamp(min=1.0)
