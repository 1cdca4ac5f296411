"""Ring-buffer replay over pixel transitions with windowed batch sampling.

Observations are stored as uint8 (environments emit pixel-quantised floats,
so the round trip is exact).  Windows never cross episode boundaries; an
episode shorter than the window length contributes a single padded window
whose padding is flagged invalid in the batch mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .numerics import RngStream


@dataclass
class TrajectoryBatch:
    """One sampled batch: tensors shaped (B, T, ...), mask 1 = real step."""

    obs: torch.Tensor           # (B, T, 3, 64, 64) float
    actions: torch.Tensor       # (B, T) int64 or (B, T, A) float
    rewards: torch.Tensor       # (B, T)
    terminations: torch.Tensor  # (B, T)
    mask: torch.Tensor          # (B, T)

    def to(self, dtype: torch.dtype) -> "TrajectoryBatch":
        return TrajectoryBatch(
            obs=self.obs.to(dtype),
            actions=self.actions if self.actions.dtype == torch.int64 else self.actions.to(dtype),
            rewards=self.rewards.to(dtype),
            terminations=self.terminations.to(dtype),
            mask=self.mask.to(dtype),
        )


class ReplayBuffer:
    """Fixed-capacity transition store with chronological eviction."""

    def __init__(self, capacity: int, action_kind: str, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.action_kind = action_kind
        self.action_dim = action_dim
        self.obs = np.zeros((capacity, 3, 64, 64), dtype=np.uint8)
        if action_kind == "discrete":
            self.actions = np.zeros((capacity,), dtype=np.int64)
        else:
            self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros((capacity,), dtype=np.float32)
        self.terminations = np.zeros((capacity,), dtype=np.uint8)
        self.episode_ids = np.full((capacity,), -1, dtype=np.int64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs: np.ndarray, action, reward: float, termination: bool,
             episode_id: int) -> None:
        """Store one transition; obs is float in [0, 1], pixel-quantised."""
        quantised = np.rint(np.asarray(obs) * 255.0)
        if not np.allclose(quantised / 255.0, obs, atol=1e-6):
            raise ValueError("observation is not pixel-quantised; refusing lossy store")
        i = self.cursor
        self.obs[i] = quantised.astype(np.uint8)
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminations[i] = np.uint8(termination)
        self.episode_ids[i] = episode_id
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _logical(self) -> np.ndarray:
        """Physical indices in chronological order."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def _window_starts(self, length: int):
        """Full-window starts plus padded short-episode starts (logical)."""
        order = self._logical()
        ids = self.episode_ids[order]
        n = self.size
        if n == 0:
            return order, np.zeros(0, dtype=np.int64), []
        bounds = np.concatenate([[0], np.flatnonzero(np.diff(ids) != 0) + 1, [n]])
        run_starts = bounds[:-1]
        run_lens = np.diff(bounds)
        long = run_lens >= length
        full = np.concatenate(
            [np.arange(s, s + l - length + 1) for s, l in zip(run_starts[long], run_lens[long])]
            or [np.zeros(0, dtype=np.int64)]
        )
        padded = list(zip(run_starts[~long].tolist(), run_lens[~long].tolist()))
        return order, full, padded

    def sample_batch(self, batch_size: int, length: int, stream: RngStream,
                     dtype: torch.dtype = torch.float32) -> TrajectoryBatch:
        """Sample windows uniformly over all valid starts."""
        order, full, padded = self._window_starts(length)
        n_options = len(full) + len(padded)
        if n_options == 0:
            raise ValueError("buffer holds no sampleable window")
        picks = stream.integers(0, n_options, (batch_size,))
        obs = np.zeros((batch_size, length, 3, 64, 64), dtype=np.uint8)
        act = np.zeros((batch_size, length) + self.actions.shape[1:], dtype=self.actions.dtype)
        rew = np.zeros((batch_size, length), dtype=np.float32)
        term = np.zeros((batch_size, length), dtype=np.uint8)
        mask = np.zeros((batch_size, length), dtype=np.float32)
        for b, pick in enumerate(picks):
            if pick < len(full):
                start, run_len = full[pick], length
            else:
                start, run_len = padded[pick - len(full)]
            idx = order[start:start + run_len]
            obs[b, :run_len] = self.obs[idx]
            act[b, :run_len] = self.actions[idx]
            rew[b, :run_len] = self.rewards[idx]
            term[b, :run_len] = self.terminations[idx]
            mask[b, :run_len] = 1.0
            if run_len < length:  # repeat-last padding, flagged invalid
                obs[b, run_len:] = self.obs[idx[-1]]
                act[b, run_len:] = self.actions[idx[-1]]
        actions = torch.from_numpy(act)
        if self.action_kind != "discrete":
            actions = actions.to(dtype)
        return TrajectoryBatch(
            obs=torch.from_numpy(obs).to(dtype) / 255.0,
            actions=actions,
            rewards=torch.from_numpy(rew).to(dtype),
            terminations=torch.from_numpy(term.astype(np.float32)).to(dtype),
            mask=torch.from_numpy(mask).to(dtype),
        )

    def state_arrays(self) -> dict:
        """Arrays for checkpointing (meta carried separately)."""
        return {
            "replay/obs": self.obs[: self.size] if self.size < self.capacity else self.obs,
            "replay/actions": self.actions[: self.size] if self.size < self.capacity else self.actions,
            "replay/rewards": self.rewards[: self.size] if self.size < self.capacity else self.rewards,
            "replay/terminations": self.terminations[: self.size] if self.size < self.capacity else self.terminations,
            "replay/episode_ids": self.episode_ids[: self.size] if self.size < self.capacity else self.episode_ids,
        }

    def meta(self) -> dict:
        return {"cursor": self.cursor, "size": self.size, "capacity": self.capacity}

    def load_state(self, arrays: dict, meta: dict) -> None:
        if meta["capacity"] != self.capacity:
            raise ValueError("checkpoint replay capacity differs from configured capacity")
        self.size = meta["size"]
        self.cursor = meta["cursor"]
        n = self.size
        self.obs[:n] = arrays["replay/obs"][:n]
        self.actions[:n] = arrays["replay/actions"][:n]
        self.rewards[:n] = arrays["replay/rewards"][:n]
        self.terminations[:n] = arrays["replay/terminations"][:n]
        self.episode_ids[:n] = arrays["replay/episode_ids"][:n]
