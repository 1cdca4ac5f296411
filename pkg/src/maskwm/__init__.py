"""Masked-token world model with imagination-trained actor-critic.

A transformer backbone rolls mixed latent-action tokens forward in time; a
bidirectional masked-token prior predicts the next categorical latent; a
convolutional codec maps 64x64 pixels to and from those latents; the agent
trains purely on imagined rollouts.  Everything runs on CPU with explicit,
named randomness streams so runs are reproducible bit for bit.
"""

from .config import Config, ConfigError, load_config

__version__ = "0.1.0"

__all__ = ["Config", "ConfigError", "load_config", "__version__"]
