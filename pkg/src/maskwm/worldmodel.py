"""World model: codec + mixer + causal backbone + token prior + scalar heads.

The training loss couples the pieces with explicit stop-gradients: the
encoder learns from reconstruction and the representation KL, the sequence
side (mixer, backbone, prior, heads) learns from reward, termination, and the
dynamics KL.  Latent samples enter the sequence path detached, so dynamics
gradients never reach the encoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import DynamicsBackbone, MlpHead, StateMixer, encode_action
from .codec import Codec, Latent, N_CLASSES, N_TOKENS, reconstruction_loss
from .losses import SymlogBuckets, reward_loss, termination_loss
from .numerics import RngStream, StopGrad
from .prior import MaskGitPrior, MlpPrior, masked_kl, sample_training_mask


@dataclass
class WorldModelSizes:
    """Architectural knobs; defaults match the full-scale configuration."""

    dim: int = 512
    layers: int = 2
    heads: int = 8
    dropout: float = 0.1
    max_context: int = 64
    encoder_channels: tuple = (32, 64, 128, 256)
    unimix_eps: float = 0.01
    prior_kind: str = "maskgit"
    prior_width: int = 128
    prior_layers: int = 4
    prior_heads: int = 8
    prior_dropout: float = 0.0
    action_kind: str = "discrete"
    action_dim: int = 5
    mixer_mode: str = "concat"
    bucket_low: float = -20.0
    bucket_high: float = 20.0


@dataclass
class LossBreakdown:
    total: torch.Tensor
    parts: dict = field(default_factory=dict)


class WorldModel(nn.Module):
    """Everything needed to encode, predict, and decode trajectories."""

    def __init__(self, sizes: WorldModelSizes):
        super().__init__()
        self.sizes = sizes
        self.codec = Codec(sizes.encoder_channels, sizes.unimix_eps)
        self.mixer = StateMixer(sizes.action_dim, sizes.dim, sizes.mixer_mode, sizes.heads)
        self.backbone = DynamicsBackbone(
            sizes.dim, sizes.layers, sizes.heads, sizes.dropout, sizes.max_context
        )
        if sizes.prior_kind == "maskgit":
            self.prior = MaskGitPrior(
                sizes.dim, sizes.prior_width, sizes.prior_layers,
                sizes.prior_heads, sizes.prior_dropout,
            )
        elif sizes.prior_kind == "mlp":
            self.prior = MlpPrior(sizes.dim)
        else:
            raise ValueError(f"unknown prior kind {sizes.prior_kind!r}")
        self.reward_head = MlpHead(sizes.dim, sizes.dim, 255)
        self.termination_head = MlpHead(sizes.dim, sizes.dim, 1)
        self.buckets = SymlogBuckets(255, sizes.bucket_low, sizes.bucket_high)
        self.decoder_calls = 0
        self.sg = StopGrad()

    def encode(self, obs: torch.Tensor, stream: RngStream | None,
               sample_mode: str = "hard") -> Latent:
        return self.codec.encode(obs, stream, sample_mode)

    def decode(self, latent_flat: torch.Tensor) -> torch.Tensor:
        self.decoder_calls += 1
        return self.codec.decode(latent_flat)

    def mix(self, latent_sample: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        vec = encode_action(actions, self.sizes.action_kind, self.sizes.action_dim)
        return self.mixer(latent_sample, vec.to(latent_sample.dtype))

    def predict_reward(self, hidden: torch.Tensor) -> torch.Tensor:
        """Expected reward from the bucket head."""
        return self.buckets.decode(self.reward_head(hidden))

    def predict_continue(self, hidden: torch.Tensor) -> torch.Tensor:
        """Probability the episode continues (1 - termination probability)."""
        return 1.0 - torch.sigmoid(self.termination_head(hidden).squeeze(-1))

    def loss(self, obs: torch.Tensor, actions: torch.Tensor, rewards: torch.Tensor,
             terminations: torch.Tensor, valid: torch.Tensor, streams: dict,
             beta_dyn: float = 0.5, beta_rep: float = 0.1, recon_coeff: float = 1.0,
             sample_mode: str = "hard") -> LossBreakdown:
        """Composite training loss over a (B, T) trajectory batch.

        ``valid`` is a (B, T) 0/1 weight for padded steps.  ``streams`` must
        hold "latent" (token sampling), "mask" (training masks), and may hold
        "noise" (dropout).  The breakdown parts always satisfy
        total = rew + term + beta_dyn * dyn + beta_rep * rep + recon_coeff * recon.
        """
        b, t = obs.shape[:2]
        dtype = obs.dtype
        noise = streams.get("noise")

        latent = self.encode(obs, streams.get("latent"), sample_mode)

        recon = self.decode(latent.flat)
        recon_per = reconstruction_loss(recon, obs)

        # tokens stay attached: reward/termination/dyn gradients shape the
        # encoder through the backbone, as in joint observation-dynamics
        # training; only the prior input and KL arguments carry stop-grads
        tokens = self.mix(latent.sample, actions)
        hidden = self.backbone.forward_sequence(tokens, stream=noise)

        rew_logits = self.reward_head(hidden)
        term_prob = torch.sigmoid(self.termination_head(hidden).squeeze(-1))
        rew_per = reward_loss(rew_logits, rewards, self.buckets)
        term_per = termination_loss(term_prob, terminations)

        # prior predicts tokens of step t+1 from hidden state of step t
        mask_np = sample_training_mask(streams["mask"], shape=(b, t - 1))
        mask = torch.from_numpy(mask_np).to(torch.bool)
        target_sample = self.sg(latent.sample[:, 1:])
        target_probs = latent.probs[:, 1:]
        prior_logits = self.prior(hidden[:, :-1], target_sample, mask, stream=noise)
        dyn_per = masked_kl(self.sg(target_probs), prior_logits, mask)
        rep_per = masked_kl(target_probs, self.sg(prior_logits), mask)

        w = valid.to(dtype)
        # a KL step counts only when both endpoints are valid
        w_kl = w[:, :-1] * w[:, 1:]
        denom = w.sum().clamp(min=1.0)
        denom_kl = w_kl.sum().clamp(min=1.0)

        parts = {
            "loss_rew": (rew_per * w).sum() / denom,
            "loss_term": (term_per * w).sum() / denom,
            "loss_dyn": (dyn_per * w_kl).sum() / denom_kl,
            "loss_rep": (rep_per * w_kl).sum() / denom_kl,
            "loss_recon": (recon_per * w).sum() / denom,
        }
        total = (
            parts["loss_rew"]
            + parts["loss_term"]
            + beta_dyn * parts["loss_dyn"]
            + beta_rep * parts["loss_rep"]
            + recon_coeff * parts["loss_recon"]
        )
        return LossBreakdown(total=total, parts=parts)

    def perplexity(self, obs: torch.Tensor, actions: torch.Tensor,
                   valid: torch.Tensor | None = None) -> float:
        """Teacher-forced next-token perplexity over a trajectory batch."""
        from .prior import prior_token_log_probs

        was_training = self.training
        self.eval()
        with torch.no_grad():
            latent = self.encode(obs, None, sample_mode="mode")
            tokens = self.mix(latent.sample, actions)
            hidden = self.backbone.forward_sequence(tokens)
            target = latent.indices[:, 1:]
            logp = prior_token_log_probs(self.prior, hidden[:, :-1], target)
            if valid is not None:
                w = (valid[:, :-1] * valid[:, 1:]).unsqueeze(-1).to(logp.dtype)
                mean_lp = (logp * w).sum() / (w.sum() * logp.shape[-1]).clamp(min=1.0)
            else:
                mean_lp = logp.mean()
        if was_training:
            self.train()
        return float(torch.exp(-mean_lp).item())

    def parameter_groups(self) -> dict:
        """Named parameter lists for optimizer construction and routing tests."""
        return {
            "encoder": list(self.codec.encoder.parameters()),
            "decoder": list(self.codec.decoder.parameters()),
            "mixer": list(self.mixer.parameters()),
            "backbone": list(self.backbone.parameters()),
            "prior": list(self.prior.parameters()),
            "reward_head": list(self.reward_head.parameters()),
            "termination_head": list(self.termination_head.parameters()),
        }


def build_world_model(sizes: WorldModelSizes, init_stream: RngStream,
                      dtype: torch.dtype = torch.float32) -> WorldModel:
    """Construct and deterministically initialise a world model."""
    from .numerics import init_module_params

    model = WorldModel(sizes).to(dtype)
    init_module_params(model, init_stream)
    return model
