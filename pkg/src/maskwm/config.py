"""Run configuration: defaults, file loading, env-var and CLI overrides.

Precedence, lowest to highest: built-in defaults, config file, environment
variables (MASKWM_<KEY>), command-line --set overrides.  Unknown keys and
out-of-range values raise ConfigError naming the offender.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


ENV_PREFIX = "MASKWM_"


@dataclass
class Config:
    # run identity
    env: str = "gridworld"
    seed: int = 0
    precision: str = "float32"

    # sequence model
    transformer_layers: int = 2
    embed_dim: int = 512
    transformer_heads: int = 8
    dropout: float = 0.1
    max_context: int = 64
    mixer_mode: str = "concat"

    # observation codec
    encoder_channels: list = field(default_factory=lambda: [32, 64, 128, 256])
    unimix: float = 0.01

    # token prior
    prior_kind: str = "maskgit"
    maskgit_layers: int = 4
    maskgit_dim: int = 128
    maskgit_heads: int = 8
    maskgit_dropout: float = 0.0
    mask_schedule: str = "cosine"
    draft_rounds: int = 1
    revise_rounds: int = 1
    repetitions: int = 1

    # world-model training
    batch_size: int = 16
    batch_length: int = 64
    beta_dyn: float = 0.5
    beta_rep: float = 0.1
    recon_coeff: float = 1.0
    bucket_low: float = -20.0
    bucket_high: float = 20.0
    wm_lr: float = 1e-4
    wm_grad_clip: float = 1000.0

    # imagination and the agent
    imagination_batch: int = 1024
    imagination_context: int = 8
    imagination_horizon: int = 16
    discount: float = 0.985
    return_lambda: float = 0.95
    entropy_coeff: float = 3e-4
    critic_ema_decay: float = 0.98
    return_norm_decay: float = 0.99
    ac_lr: float = 3e-5
    ac_grad_clip: float = 100.0

    # interaction loop
    env_context: int = 16
    frame_skip: int = 1
    buffer_capacity: int = 100_000
    learning_starts: int = 1000
    update_world_model_every: int = 1
    update_agent_every: int = 1
    eval_every: int = 5000
    eval_episodes: int = 8
    checkpoint_every: int = 5000

    def validate(self) -> "Config":
        def require(cond: bool, msg: str):
            if not cond:
                raise ConfigError(msg)

        require(self.env in ("gridworld", "pointmass"), f"env: unknown environment {self.env!r}")
        require(self.precision in ("float32", "float64"), f"precision: unknown mode {self.precision!r}")
        require(self.mixer_mode in ("concat", "concat-attention", "cross-attention"),
                f"mixer_mode: unknown mode {self.mixer_mode!r}")
        require(self.prior_kind in ("maskgit", "mlp"), f"prior_kind: unknown kind {self.prior_kind!r}")
        require(self.mask_schedule == "cosine", f"mask_schedule: unknown schedule {self.mask_schedule!r}")
        for key in ("transformer_layers", "embed_dim", "transformer_heads", "max_context",
                    "maskgit_layers", "maskgit_dim", "maskgit_heads", "draft_rounds",
                    "revise_rounds", "batch_size", "batch_length", "imagination_batch",
                    "imagination_context", "imagination_horizon", "env_context", "frame_skip",
                    "buffer_capacity", "eval_episodes", "update_world_model_every",
                    "update_agent_every"):
            require(int(getattr(self, key)) >= 1, f"{key}: must be a positive integer")
        for key in ("seed", "repetitions", "learning_starts", "eval_every", "checkpoint_every"):
            require(int(getattr(self, key)) >= 0, f"{key}: must be >= 0")
        for key in ("dropout", "maskgit_dropout", "unimix"):
            require(0.0 <= float(getattr(self, key)) < 1.0, f"{key}: must be in [0, 1)")
        require(0.0 < self.discount <= 1.0, "discount: must be in (0, 1]")
        require(0.0 <= self.return_lambda <= 1.0, "return_lambda: must be in [0, 1]")
        require(0.0 <= self.critic_ema_decay <= 1.0, "critic_ema_decay: must be in [0, 1]")
        require(0.0 <= self.return_norm_decay < 1.0, "return_norm_decay: must be in [0, 1)")
        for key in ("wm_lr", "ac_lr", "wm_grad_clip", "ac_grad_clip"):
            require(float(getattr(self, key)) > 0.0, f"{key}: must be positive")
        for key in ("entropy_coeff", "beta_dyn", "beta_rep", "recon_coeff"):
            require(float(getattr(self, key)) >= 0.0, f"{key}: must be >= 0")
        require(self.bucket_low < self.bucket_high, "bucket_low: must be below bucket_high")
        require(len(self.encoder_channels) == 4 and all(int(c) >= 1 for c in self.encoder_channels),
                "encoder_channels: need four positive widths")
        require(self.embed_dim % self.transformer_heads == 0,
                "embed_dim: must be divisible by transformer_heads")
        require(self.maskgit_dim % self.maskgit_heads == 0,
                "maskgit_dim: must be divisible by maskgit_heads")
        require(self.batch_length <= self.max_context,
                "batch_length: cannot exceed max_context")
        require(self.imagination_context + self.imagination_horizon <= self.max_context,
                "imagination_horizon: context + horizon cannot exceed max_context")
        require(self.env_context <= self.max_context, "env_context: cannot exceed max_context")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        unknown = set(data) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        return cfg.validate()


def _coerce(key: str, raw: str):
    """Parse an override string: JSON when it parses, bare string otherwise."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path: str | None = None, env: dict | None = None,
                sets: list | None = None) -> Config:
    """Assemble a validated Config from all sources."""
    data = {}
    if path is not None:
        with open(path) as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        data.update(loaded)
    env = os.environ if env is None else env
    known = Config.field_names()
    for key, raw in env.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name not in known:
                raise ConfigError(f"unknown config key from environment: {key}")
            data[name] = _coerce(name, raw)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        name, raw = item.split("=", 1)
        if name not in known:
            raise ConfigError(f"unknown config key from --set: {name}")
        data[name] = _coerce(name, raw)
    return Config.from_dict(data)
