"""Deterministic random streams, sampling helpers, and gradient checking.

Every source of randomness in the package flows through ``RngStream`` so that
a (seed, stream label) pair fully determines behaviour.  Streams are built on
counter-based Philox generators, which makes their state cheap to snapshot
and restore for exact resume.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats as _scipy_stats

_MASK64 = (1 << 64) - 1


def _label_key(label: str) -> int:
    """Stable 64-bit key for a stream label."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-based random stream keyed by (seed, label).

    Identical (seed, label) pairs always produce identical draw sequences;
    distinct labels give statistically independent streams.  ``state_dict``
    and ``load_state_dict`` round-trip the exact generator state, including
    the position within the stream.
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        key = np.array([self.seed & _MASK64, _label_key(label)], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self._gen = np.random.Generator(self._bitgen)
        self.draw_calls = 0

    def spawn(self, label: str) -> "RngStream":
        """Derive an independent child stream."""
        return RngStream(self.seed, f"{self.label}/{label}")

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        self.draw_calls += 1
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        self.draw_calls += 1
        return self._gen.normal(0.0, std, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        self.draw_calls += 1
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self.draw_calls += 1
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self.draw_calls += 1
        return self._gen.choice(n, size=size, replace=replace)

    def truncated_normal(self, shape, std: float = 1.0, bound: float = 2.0) -> np.ndarray:
        """Normal truncated to [-bound, bound] sigma, via inverse CDF.

        Uses a fixed number of uniform draws per element, so the stream
        position after the call does not depend on the values drawn.
        """
        u = self.uniform(shape)
        return _scipy_stats.truncnorm.ppf(u, -bound, bound) * std

    def state_dict(self) -> dict:
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "label": self.label,
            "draw_calls": self.draw_calls,
            "counter": [int(x) for x in st["state"]["counter"]],
            "key": [int(x) for x in st["state"]["key"]],
            "buffer": [int(x) for x in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def load_state_dict(self, state: dict) -> None:
        if state["seed"] != self.seed or state["label"] != self.label:
            raise ValueError(
                f"stream identity mismatch: have ({self.seed}, {self.label!r}), "
                f"state is for ({state['seed']}, {state['label']!r})"
            )
        st = self._bitgen.state
        st["state"]["counter"] = np.array(state["counter"], dtype=np.uint64)
        st["state"]["key"] = np.array(state["key"], dtype=np.uint64)
        st["buffer"] = np.array(state["buffer"], dtype=np.uint64)
        st["buffer_pos"] = state["buffer_pos"]
        st["has_uint32"] = state["has_uint32"]
        st["uinteger"] = state["uinteger"]
        self._bitgen.state = st
        self.draw_calls = state["draw_calls"]


def torch_dtype(precision: str) -> torch.dtype:
    """Map a precision mode name to a torch dtype."""
    table = {"float32": torch.float32, "float64": torch.float64}
    if precision not in table:
        raise ValueError(f"unknown precision mode {precision!r}, expected one of {sorted(table)}")
    return table[precision]


def stream_tensor(stream: RngStream, shape, kind: str = "uniform", dtype=torch.float32, **kw) -> torch.Tensor:
    """Draw from a stream and hand back a torch tensor."""
    if kind == "uniform":
        arr = stream.uniform(shape, **kw)
    elif kind == "normal":
        arr = stream.normal(shape, **kw)
    else:
        raise ValueError(f"unknown draw kind {kind!r}")
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


def dropout(x: torch.Tensor, p: float, stream: RngStream | None, training: bool) -> torch.Tensor:
    """Inverted dropout driven by an explicit stream.

    Identity when not training, when p == 0, or when no stream is supplied.
    """
    if not training or p <= 0.0 or stream is None:
        return x
    keep = torch.from_numpy(stream.uniform(tuple(x.shape)) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


def categorical_sample(probs: torch.Tensor, stream: RngStream) -> torch.Tensor:
    """Sample indices from batched categorical distributions.

    probs has shape (..., K); the result has shape (...) with int64 indices.
    Inverse-CDF on one uniform per distribution keeps the draw count fixed.
    """
    if not torch.isfinite(probs).all():
        raise ValueError("categorical probabilities contain non-finite values")
    u = torch.from_numpy(stream.uniform(tuple(probs.shape[:-1]) + (1,))).to(probs.dtype)
    cdf = probs.cumsum(dim=-1)
    idx = (u > cdf).sum(dim=-1)
    return idx.clamp(max=probs.shape[-1] - 1).to(torch.int64)


def softmax_categorical_sample(logits, rng: RngStream, temperature: float = 1.0):
    """Sample a class index from softmax(logits / temperature).

    Accepts a 1-D array of logits and returns a python int; temperature 0 is
    rejected (use argmax explicitly for greedy decoding).
    """
    logits = torch.as_tensor(np.asarray(logits, dtype=np.float64))
    if logits.ndim != 1:
        raise ValueError(f"expected 1-D logits, got shape {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    probs = torch.softmax(logits / temperature, dim=-1)
    return int(categorical_sample(probs, rng).item())


def init_module_params(module: torch.nn.Module, stream: RngStream) -> None:
    """Initialise parameters from a stream, deterministically by name.

    Weight matrices and conv kernels get truncated-normal fan-in init,
    biases zero, normalisation scales one.  Iteration is over sorted
    parameter names so the draw order never depends on construction order.
    """
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        with torch.no_grad():
            if param.ndim >= 2:
                fan_in = int(np.prod(param.shape[1:]))
                vals = stream.spawn(f"init/{name}").truncated_normal(
                    tuple(param.shape), std=1.0 / np.sqrt(fan_in)
                )
                param.copy_(torch.from_numpy(vals).to(param.dtype))
            elif name.endswith(".weight") or name.endswith("_scale"):
                param.fill_(1.0)
            else:
                param.zero_()


class StopGrad:
    """Stop-gradient with an optional freeze tape for derivative checks.

    In "live" mode this is plain detach.  A finite-difference probe of a loss
    containing stop-gradients must hold the stopped values fixed while the
    parameters move, or the numeric derivative picks up paths autodiff
    deliberately ignores.  "record" mode detaches and stores each value in
    call order; "replay" mode returns the stored values instead, so every
    probe evaluation sees the stop-gradient arguments of the base point.
    """

    def __init__(self):
        self.mode = "live"
        self.tape: list = []
        self.idx = 0

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if self.mode == "live":
            return x.detach()
        if self.mode == "record":
            self.tape.append(x.detach().clone())
            return self.tape[-1]
        if self.idx >= len(self.tape):
            raise RuntimeError("stop-gradient replay ran past the recorded tape")
        out = self.tape[self.idx]
        self.idx += 1
        return out

    def record(self) -> None:
        self.mode = "record"
        self.tape = []

    def replay(self) -> None:
        if not self.tape:
            raise RuntimeError("nothing recorded to replay")
        self.mode = "replay"
        self.idx = 0

    def live(self) -> None:
        self.mode = "live"
        self.tape = []
        self.idx = 0


@dataclass
class CheckReport:
    """Outcome of a finite-difference gradient check."""

    passed: bool
    max_rel_err: float
    n_checked: int
    worst: tuple = ()
    failures: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def finite_difference_check(
    loss_fn,
    points,
    epsilon: float = 1e-5,
    tolerance: float = 1e-3,
    abs_floor: float = 1e-6,
    max_probes: int | None = None,
    probe_stream: RngStream | None = None,
) -> CheckReport:
    """Compare autodiff gradients of a scalar loss against central differences.

    ``points`` is a tensor or list of tensors; each is probed either fully or
    on ``max_probes`` stream-chosen coordinates.  An element passes if its
    relative error is within ``tolerance`` or its absolute error is within
    ``abs_floor``.  The loss is evaluated twice up front and must agree
    bitwise, which catches accidental nondeterminism in the closure.
    """
    single = isinstance(points, torch.Tensor)
    tensors = [points] if single else list(points)
    leaves = []
    for t in tensors:
        leaf = t.detach().clone().requires_grad_(True)
        leaves.append(leaf)

    def call():
        out = loss_fn(leaves[0]) if single else loss_fn(*leaves)
        if not isinstance(out, torch.Tensor) or out.ndim != 0:
            raise ValueError("loss_fn must return a scalar tensor")
        return out

    base = call()
    recheck = call()
    if float(base.detach()) != float(recheck.detach()):
        raise ValueError(
            f"loss_fn is not deterministic: {float(base.detach())!r} "
            f"vs {float(recheck.detach())!r}"
        )
    if not base.requires_grad:
        raise ValueError("loss_fn does not depend on any probed tensor")
    grads = torch.autograd.grad(base, leaves, allow_unused=True)
    if all(g is None for g in grads):
        raise ValueError("loss_fn does not depend on any probed tensor")

    max_rel = 0.0
    worst = ()
    failures = []
    n_checked = 0
    for ti, (leaf, grad) in enumerate(zip(leaves, grads)):
        flat = leaf.detach().reshape(-1)
        n = flat.numel()
        if max_probes is not None and n > max_probes:
            if probe_stream is None:
                raise ValueError("max_probes set but no probe_stream supplied")
            idxs = probe_stream.choice(n, size=max_probes, replace=False)
        else:
            idxs = np.arange(n)
        gflat = (
            torch.zeros_like(flat) if grad is None else grad.detach().reshape(-1)
        )
        for i in idxs:
            i = int(i)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + epsilon
            f_plus = float(call().detach())
            with torch.no_grad():
                flat[i] = orig - epsilon
            f_minus = float(call().detach())
            with torch.no_grad():
                flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * epsilon)
            g_ad = gflat[i].item()
            err = abs(g_ad - g_fd)
            if err <= abs_floor:
                n_checked += 1
                continue
            rel = err / max(abs(g_ad), abs(g_fd))
            if rel > max_rel:
                max_rel = rel
                worst = (ti, i, g_ad, g_fd)
            if rel > tolerance:
                failures.append((ti, i, g_ad, g_fd, rel))
            n_checked += 1
    return CheckReport(
        passed=not failures,
        max_rel_err=max_rel,
        n_checked=n_checked,
        worst=worst,
        failures=failures,
    )
