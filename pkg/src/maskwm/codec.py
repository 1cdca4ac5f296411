"""Categorical VAE observation codec.

64x64 RGB frames are encoded into 32 categorical tokens of 32 classes each.
Sampling is straight-through: the forward value is the one-hot sample, the
gradient is taken through the class probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .numerics import RngStream, categorical_sample

N_TOKENS = 32
N_CLASSES = 32
LATENT_WIDTH = N_TOKENS * N_CLASSES


def unimix(probs: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Blend a categorical with the uniform: (1 - eps) * p + eps / K.

    Keeps every class probability at least eps / K so log-ratios stay finite.
    """
    k = probs.shape[-1]
    return (1.0 - epsilon) * probs + epsilon / k


@dataclass
class Latent:
    """Encoder output for one frame (or a batch of frames)."""

    logits: torch.Tensor  # (..., N_TOKENS, N_CLASSES)
    probs: torch.Tensor   # unimixed probabilities, same shape
    sample: torch.Tensor  # one-hot with straight-through gradient, same shape

    @property
    def flat(self) -> torch.Tensor:
        return self.sample.reshape(self.sample.shape[:-2] + (LATENT_WIDTH,))

    @property
    def indices(self) -> torch.Tensor:
        return self.sample.detach().argmax(dim=-1)


class Encoder(nn.Module):
    """Conv stack from 3x64x64 pixels to token logits.

    Four stride-2 convolutions halve the frame to 4x4, then a linear layer
    maps the flattened features to 32x32 logits.  Channel widths default to
    (32, 64, 128, 256) and may be narrowed for small-compute runs.
    """

    def __init__(self, channels=(32, 64, 128, 256)):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("encoder needs exactly four channel widths")
        chans = [3, *channels]
        convs = []
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            convs.append(nn.Conv2d(c_in, c_out, kernel_size=4, stride=2, padding=1))
            convs.append(nn.BatchNorm2d(c_out, momentum=0.01))
            convs.append(nn.ReLU())
        self.convs = nn.Sequential(*convs)
        self.head = nn.Linear(channels[-1] * 4 * 4, LATENT_WIDTH)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[-3:] != (3, 64, 64):
            raise ValueError(f"expected (..., 3, 64, 64) observations, got {tuple(obs.shape)}")
        lead = obs.shape[:-3]
        x = obs.reshape((-1, 3, 64, 64))
        x = self.convs(x)
        x = self.head(x.flatten(1))
        return x.reshape(lead + (N_TOKENS, N_CLASSES))


class Decoder(nn.Module):
    """Transposed-conv stack from flattened tokens back to 3x64x64 pixels."""

    def __init__(self, channels=(32, 64, 128, 256)):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("decoder needs exactly four channel widths")
        self.base = channels[-1]
        self.stem = nn.Sequential(
            nn.Linear(LATENT_WIDTH, self.base * 4 * 4),
            nn.BatchNorm1d(self.base * 4 * 4, momentum=0.01),
            nn.ReLU(),
        )
        rev = list(reversed(channels))  # e.g. 256, 128, 64, 32
        deconvs = []
        for c_in, c_out in zip(rev[:-1], rev[1:]):
            deconvs.append(nn.ConvTranspose2d(c_in, c_out, kernel_size=4, stride=2, padding=1))
            deconvs.append(nn.BatchNorm2d(c_out, momentum=0.01))
            deconvs.append(nn.ReLU())
        deconvs.append(nn.ConvTranspose2d(rev[-1], 3, kernel_size=4, stride=2, padding=1))
        self.deconvs = nn.Sequential(*deconvs)

    def forward(self, latent_flat: torch.Tensor) -> torch.Tensor:
        if latent_flat.shape[-1] != LATENT_WIDTH:
            raise ValueError(f"expected (..., {LATENT_WIDTH}) latents, got {tuple(latent_flat.shape)}")
        lead = latent_flat.shape[:-1]
        x = latent_flat.reshape((-1, LATENT_WIDTH))
        x = self.stem(x)
        x = x.reshape(-1, self.base, 4, 4)
        x = self.deconvs(x)
        return x.reshape(lead + (3, 64, 64))


def straight_through(probs: torch.Tensor, onehot: torch.Tensor) -> torch.Tensor:
    """Forward the one-hot sample, route gradients through the probabilities."""
    return probs + (onehot - probs).detach()


class Codec(nn.Module):
    """Encoder/decoder pair with unimix smoothing and ST sampling."""

    def __init__(self, channels=(32, 64, 128, 256), unimix_eps: float = 0.01):
        super().__init__()
        self.encoder = Encoder(channels)
        self.decoder = Decoder(channels)
        self.unimix_eps = unimix_eps

    def encode(self, obs: torch.Tensor, stream: RngStream | None,
               sample_mode: str = "hard") -> Latent:
        """Encode frames to a Latent.

        sample_mode "hard" draws one-hot samples (stream required); "soft"
        uses the probabilities themselves as the sample, which keeps the
        whole pipeline differentiable for gradient checking; "mode" takes
        the argmax (deterministic acting/eval).
        """
        logits = self.encoder(obs)
        probs = unimix(torch.softmax(logits, dim=-1), self.unimix_eps)
        if sample_mode == "soft":
            sample = probs
        elif sample_mode in ("hard", "mode"):
            if sample_mode == "mode":
                idx = probs.argmax(dim=-1)
            else:
                if stream is None:
                    raise ValueError("hard sampling needs an rng stream")
                idx = categorical_sample(probs.detach(), stream)
            onehot = torch.nn.functional.one_hot(idx, N_CLASSES).to(probs.dtype)
            sample = straight_through(probs, onehot)
        else:
            raise ValueError(f"unknown sample_mode {sample_mode!r}")
        return Latent(logits=logits, probs=probs, sample=sample)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """Accepts flat (..., 1024) or token-shaped (..., 32, 32) latents."""
        if latent.ndim >= 2 and latent.shape[-2:] == (N_TOKENS, N_CLASSES):
            latent = latent.reshape(*latent.shape[:-2], LATENT_WIDTH)
        return self.decoder(latent)


def reconstruction_loss(recon: torch.Tensor, obs: torch.Tensor) -> torch.Tensor:
    """Mean squared error per frame: (..., 3, 64, 64) -> (...)."""
    return ((recon - obs) ** 2).mean(dim=(-1, -2, -3))
