"""Latent imagination: condition on real frames, roll the model forward.

Rollouts run under no_grad and produce fully detached trajectories; policy
losses later recompute log-probabilities on the stored states.  The cached
path appends one mixed token per step; the recompute path re-runs the full
prefix each step and must produce the same hidden states.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .numerics import RngStream
from .prior import draft_and_revise
from .worldmodel import WorldModel


@dataclass
class AgentState:
    """Policy input: current latent sample plus the hidden state behind it."""

    latent: torch.Tensor  # (B, 32, 32) one-hot
    hidden: torch.Tensor  # (B, D)

    @property
    def feat(self) -> torch.Tensor:
        flat = self.latent.reshape(self.latent.shape[0], -1)
        return torch.cat([flat, self.hidden], dim=-1)


@dataclass
class Conditioned:
    """Result of consuming a real context: cache, state, and the token prefix."""

    cache: object
    state: AgentState
    tokens: torch.Tensor  # (B, C, D) mixed tokens, kept for recompute mode


@dataclass
class ImaginedTrajectory:
    feats: torch.Tensor         # (B, L+1, 1024 + D)
    latents: torch.Tensor      # (B, L+1, 32) token indices
    hiddens: torch.Tensor      # (B, L+1, D)
    env_actions: torch.Tensor  # (B, L) or (B, L, A)
    raw_actions: torch.Tensor  # (B, L) or (B, L, A); pre-squash for continuous
    rewards: torch.Tensor      # (B, L)
    continues: torch.Tensor    # (B, L) in {0, 1}
    backbone_forwards: int


def condition(wm: WorldModel, obs: torch.Tensor, actions: torch.Tensor,
              stream: RngStream, t_draft: int = 1, t_revise: int = 1,
              repetitions: int = 1) -> Conditioned:
    """Encode a real (B, C) context and sample the first imagined latent."""
    with torch.no_grad():
        latent = wm.encode(obs, stream, sample_mode="hard")
        tokens = wm.mix(latent.sample, actions)
        cache = wm.backbone.make_cache()
        hidden = wm.backbone.forward_sequence(tokens, cache=cache)
        h_last = hidden[:, -1]
        z_next = draft_and_revise(wm.prior, h_last, stream, t_draft, t_revise, repetitions)
    return Conditioned(cache=cache, state=AgentState(z_next, h_last), tokens=tokens)


def imagine(wm: WorldModel, actor, cond: Conditioned, horizon: int,
            stream: RngStream, t_draft: int = 1, t_revise: int = 1,
            repetitions: int = 1, use_cache: bool = True) -> ImaginedTrajectory:
    """Roll the world model ``horizon`` steps under the actor.

    With use_cache the backbone consumes one token per step; without it the
    full token prefix is recomputed every step (an equivalence oracle, not a
    fast path).  Either way the backbone runs exactly ``horizon`` times.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    state = cond.state
    prefix = cond.tokens
    feats, latents, hiddens = [state.feat], [state.latent.argmax(-1)], [state.hidden]
    env_actions, raw_actions, rewards, continues = [], [], [], []
    forwards_before = wm.backbone.forward_calls
    with torch.no_grad():
        for _ in range(horizon):
            env_a, raw_a = actor.sample(state.feat, stream)
            token = wm.mix(state.latent, env_a).unsqueeze(1)
            if use_cache:
                h = wm.backbone.forward_sequence(token, cache=cond.cache)[:, -1]
            else:
                prefix = torch.cat([prefix, token], dim=1)
                h = wm.backbone.forward_sequence(prefix)[:, -1]
            reward = wm.predict_reward(h)
            cont = (wm.predict_continue(h) >= 0.5).to(h.dtype)
            z_next = draft_and_revise(wm.prior, h, stream, t_draft, t_revise, repetitions)
            state = AgentState(z_next, h)
            env_actions.append(env_a)
            raw_actions.append(raw_a)
            rewards.append(reward)
            continues.append(cont)
            feats.append(state.feat)
            latents.append(state.latent.argmax(-1))
            hiddens.append(state.hidden)
    return ImaginedTrajectory(
        feats=torch.stack(feats, dim=1),
        latents=torch.stack(latents, dim=1),
        hiddens=torch.stack(hiddens, dim=1),
        env_actions=torch.stack(env_actions, dim=1),
        raw_actions=torch.stack(raw_actions, dim=1),
        rewards=torch.stack(rewards, dim=1),
        continues=torch.stack(continues, dim=1),
        backbone_forwards=wm.backbone.forward_calls - forwards_before,
    )
