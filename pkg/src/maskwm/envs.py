"""Pixel toy environments with exactly computable oracle baselines.

Both environments render 64x64 RGB frames quantised to uint8 (exposed as
float in [0, 1]), run deterministically given their reset stream and the
action sequence, and serialise their full live state for checkpointing.

KeyDoorGrid: an 8x8 grid; pick up the key (+0.5), then open the door (+1.0
with the key, always ends the episode).  Optimal return is 1.5 from every
start, reachable well inside the 128-step cap.

PointMass: a damped point on the unit square starting near a random corner;
reward each step is 1 - clamp(distance-to-target / sqrt(2), 0, 1) with the
target at the opposite corner; episodes last exactly 200 steps.
"""
from __future__ import annotations

import numpy as np

from .numerics import RngStream

GRID_CELLS = 8
CELL_PX = 8
GRID_KEY = (1, 1)
GRID_DOOR = (6, 6)
GRID_MAX_STEPS = 128
GRID_ACTIONS = 5  # up, down, left, right, noop

POINTMASS_STEPS = 200
POINTMASS_DT = 0.05
POINTMASS_DAMPING = 0.9

_GRID_COLORS = {
    "bg": (20, 20, 20),
    "key": (230, 200, 40),
    "door": (60, 90, 220),
    "agent": (220, 60, 60),
    "agent_key": (230, 70, 200),
}


class KeyDoorGrid:
    """Fully observable key-and-door gridworld on pixels."""

    action_kind = "discrete"
    n_actions = GRID_ACTIONS

    def __init__(self, stream: RngStream):
        self.stream = stream
        self.pos = (0, 0)
        self.carrying = False
        self.key_present = True
        self.steps = 0
        self.done = True

    def reset(self) -> np.ndarray:
        while True:
            r = int(self.stream.integers(0, GRID_CELLS))
            c = int(self.stream.integers(0, GRID_CELLS))
            if (r, c) not in (GRID_KEY, GRID_DOOR):
                break
        self.pos = (r, c)
        self.carrying = False
        self.key_present = True
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action: int):
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        if not 0 <= int(action) < GRID_ACTIONS:
            raise ValueError(f"action {action} outside [0, {GRID_ACTIONS})")
        dr, dc = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)][int(action)]
        r = min(max(self.pos[0] + dr, 0), GRID_CELLS - 1)
        c = min(max(self.pos[1] + dc, 0), GRID_CELLS - 1)
        self.pos = (r, c)
        self.steps += 1
        reward = 0.0
        if self.key_present and self.pos == GRID_KEY:
            self.key_present = False
            self.carrying = True
            reward += 0.5
        termination = False
        if self.pos == GRID_DOOR:
            termination = True
            if self.carrying:
                reward += 1.0
        if self.steps >= GRID_MAX_STEPS:
            termination = True
        self.done = termination
        return self.observation(), reward, termination

    def observation(self) -> np.ndarray:
        frame = np.zeros((3, 64, 64), dtype=np.uint8)
        frame[:] = np.array(_GRID_COLORS["bg"], dtype=np.uint8).reshape(3, 1, 1)

        def paint(cell, color):
            r0, c0 = cell[0] * CELL_PX, cell[1] * CELL_PX
            frame[:, r0:r0 + CELL_PX, c0:c0 + CELL_PX] = (
                np.array(color, dtype=np.uint8).reshape(3, 1, 1)
            )

        paint(GRID_DOOR, _GRID_COLORS["door"])
        if self.key_present:
            paint(GRID_KEY, _GRID_COLORS["key"])
        paint(self.pos, _GRID_COLORS["agent_key" if self.carrying else "agent"])
        return frame.astype(np.float32) / 255.0

    def state(self) -> dict:
        return {
            "pos": list(self.pos),
            "carrying": self.carrying,
            "key_present": self.key_present,
            "steps": self.steps,
            "done": self.done,
            "stream": self.stream.state_dict(),
        }

    def load_state(self, state: dict) -> None:
        self.pos = tuple(state["pos"])
        self.carrying = state["carrying"]
        self.key_present = state["key_present"]
        self.steps = state["steps"]
        self.done = state["done"]
        self.stream.load_state_dict(state["stream"])


def grid_optimal_steps(start, carrying: bool = False) -> int:
    """Fewest steps to finish from ``start`` (Manhattan metric; no obstacles)."""
    def dist(a, b):
        return abs(a[0] - b[0]) + abs(a[1] - b[1])

    if carrying:
        return dist(start, GRID_DOOR)
    return dist(start, GRID_KEY) + dist(GRID_KEY, GRID_DOOR)


def grid_optimal_return(start, carrying: bool = False) -> float:
    """Best achievable undiscounted return from a grid state."""
    steps = grid_optimal_steps(start, carrying)
    if steps > GRID_MAX_STEPS:
        return 0.0
    return 1.5 if not carrying else 1.0


class PointMass:
    """Damped point mass steered toward a fixed target, dense reward."""

    action_kind = "continuous"
    action_dim = 2

    def __init__(self, stream: RngStream):
        self.stream = stream
        self.p = np.zeros(2)
        self.v = np.zeros(2)
        self.target = np.zeros(2)
        self.steps = 0
        self.done = True

    def reset(self) -> np.ndarray:
        corner = int(self.stream.integers(0, 4))
        bits = np.array([corner & 1, corner >> 1], dtype=np.float64)
        jitter = self.stream.uniform((2,), 0.0, 0.05)
        self.p = bits + (1.0 - 2.0 * bits) * jitter
        self.v = np.zeros(2)
        self.target = 0.9 - 0.8 * bits  # opposite corner, pulled in from the wall
        self.steps = 0
        self.done = False
        return self.observation()

    def step(self, action):
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        a = np.asarray(action, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite action {a}")
        a = np.clip(a, -1.0, 1.0)
        self.v = POINTMASS_DAMPING * self.v + a * POINTMASS_DT
        p_new = self.p + self.v * POINTMASS_DT
        for axis in range(2):
            if p_new[axis] < 0.0 or p_new[axis] > 1.0:
                p_new[axis] = min(max(p_new[axis], 0.0), 1.0)
                self.v[axis] = 0.0
        self.p = p_new
        self.steps += 1
        d = float(np.linalg.norm(self.p - self.target))
        reward = 1.0 - min(d / np.sqrt(2.0), 1.0)
        termination = self.steps >= POINTMASS_STEPS
        self.done = termination
        return self.observation(), reward, termination

    def observation(self) -> np.ndarray:
        frame = np.zeros((3, 64, 64), dtype=np.uint8)
        frame[:] = np.array([15, 15, 25], dtype=np.uint8).reshape(3, 1, 1)

        def paint(point, color, half: int):
            r = int(round(point[1] * 63))
            c = int(round(point[0] * 63))
            r0, r1 = max(r - half, 0), min(r + half + 1, 64)
            c0, c1 = max(c - half, 0), min(c + half + 1, 64)
            frame[:, r0:r1, c0:c1] = np.array(color, dtype=np.uint8).reshape(3, 1, 1)

        paint(self.target, (50, 220, 80), 3)
        paint(self.p, (235, 70, 60), 2)
        return frame.astype(np.float32) / 255.0

    def state(self) -> dict:
        return {
            "p": self.p.tolist(),
            "v": self.v.tolist(),
            "target": self.target.tolist(),
            "steps": self.steps,
            "done": self.done,
            "stream": self.stream.state_dict(),
        }

    def load_state(self, state: dict) -> None:
        self.p = np.array(state["p"])
        self.v = np.array(state["v"])
        self.target = np.array(state["target"])
        self.steps = state["steps"]
        self.done = state["done"]
        self.stream.load_state_dict(state["stream"])


def pointmass_scripted_return(env: PointMass) -> float:
    """Roll a hand-tuned PD controller from the current reset; oracle baseline."""
    total = 0.0
    done = False
    while not done:
        a = 8.0 * (env.target - env.p) - 4.0 * env.v
        _, r, done = env.step(np.clip(a, -1.0, 1.0))
        total += r
    return total


class FrameSkip:
    """Repeat each action k times, summing rewards, stopping early on termination."""

    def __init__(self, env, repeat: int):
        if repeat < 1:
            raise ValueError("frame skip must be >= 1")
        self.env = env
        self.repeat = repeat
        self.action_kind = env.action_kind
        if env.action_kind == "discrete":
            self.n_actions = env.n_actions
        else:
            self.action_dim = env.action_dim

    def reset(self):
        return self.env.reset()

    def step(self, action):
        total = 0.0
        for _ in range(self.repeat):
            obs, reward, termination = self.env.step(action)
            total += reward
            if termination:
                break
        return obs, total, termination

    def state(self) -> dict:
        return self.env.state()

    def load_state(self, state: dict) -> None:
        self.env.load_state(state)


def make_env(name: str, stream: RngStream, frame_skip: int = 1):
    """Build an environment by name; unknown names raise with the name."""
    if name == "gridworld":
        env = KeyDoorGrid(stream)
    elif name == "pointmass":
        env = PointMass(stream)
    else:
        raise ValueError(f"unknown environment {name!r}")
    if frame_skip > 1:
        return FrameSkip(env, frame_skip)
    return env


def action_spec(name: str) -> tuple:
    """(kind, dim) for an environment name without constructing it."""
    if name == "gridworld":
        return ("discrete", GRID_ACTIONS)
    if name == "pointmass":
        return ("continuous", 2)
    raise ValueError(f"unknown environment {name!r}")
