"""Training loop: env interaction, world-model updates, imagination, logging.

Two phases interleave per environment step: the world model trains on
replayed windows, the agent trains on imagined rollouts that start from
replayed contexts.  Every random draw comes from named streams owned by the
trainer, and the checkpoint captures all of them plus the live env and loop
state, so a resumed run continues the original bit for bit.
"""
from __future__ import annotations

import os
import time

import numpy as np
import torch

from .agent import (Actor, Critic, ReturnNormalizer, actor_loss, critic_loss,
                    ema_update, lambda_returns, make_ema_critic)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config
from .envs import action_spec, make_env
from .imagine import condition, imagine
from .numerics import RngStream, init_module_params, torch_dtype
from .replay import ReplayBuffer
from .worldmodel import WorldModel, WorldModelSizes, build_world_model

METRIC_COLUMNS = [
    "step", "loss_total", "loss_rew", "loss_term", "loss_dyn", "loss_rep",
    "loss_recon", "actor_loss", "critic_loss", "entropy", "S", "eval_return",
    "perplexity",
]

STREAM_NAMES = [
    "init/wm", "init/actor", "init/critic", "env", "eval_env", "prefill",
    "replay", "latent", "mask", "noise", "imagination", "action",
    "eval_action", "eval_ppl",
]


def _fmt(value) -> str:
    """CSV cell: repr of a python float for byte-stable reruns."""
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def sizes_from_config(cfg: Config, kind: str, adim: int) -> WorldModelSizes:
    return WorldModelSizes(
        dim=cfg.embed_dim,
        layers=cfg.transformer_layers,
        heads=cfg.transformer_heads,
        dropout=cfg.dropout,
        max_context=cfg.max_context,
        encoder_channels=tuple(int(c) for c in cfg.encoder_channels),
        unimix_eps=cfg.unimix,
        prior_kind=cfg.prior_kind,
        prior_width=cfg.maskgit_dim,
        prior_layers=cfg.maskgit_layers,
        prior_heads=cfg.maskgit_heads,
        prior_dropout=cfg.maskgit_dropout,
        action_kind=kind,
        action_dim=adim,
        mixer_mode=cfg.mixer_mode,
        bucket_low=cfg.bucket_low,
        bucket_high=cfg.bucket_high,
    )


class Trainer:
    """Owns the model, the agent, the env, the buffer, and all rng streams."""

    def __init__(self, cfg: Config, out_dir: str):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.dtype = torch_dtype(cfg.precision)

        root = RngStream(cfg.seed)
        self.streams = {name: root.spawn(name) for name in STREAM_NAMES}

        kind, adim = action_spec(cfg.env)
        self.action_kind, self.action_dim = kind, adim
        self.wm = build_world_model(
            sizes_from_config(cfg, kind, adim), self.streams["init/wm"], self.dtype
        )
        feat_dim = 32 * 32 + cfg.embed_dim
        self.actor = Actor(feat_dim, cfg.embed_dim, kind, adim).to(self.dtype)
        init_module_params(self.actor, self.streams["init/actor"])
        self.critic = Critic(feat_dim, cfg.embed_dim, self.wm.buckets).to(self.dtype)
        init_module_params(self.critic, self.streams["init/critic"])
        self.ema_critic = make_ema_critic(self.critic)
        self.normalizer = ReturnNormalizer(cfg.return_norm_decay)

        self.wm_opt = torch.optim.Adam(
            self.wm.parameters(), lr=cfg.wm_lr, betas=(0.9, 0.999), eps=1e-8
        )
        self.ac_params = list(self.actor.parameters()) + list(self.critic.parameters())
        self.ac_opt = torch.optim.Adam(
            self.ac_params, lr=cfg.ac_lr, betas=(0.9, 0.999), eps=1e-8
        )

        self.replay = ReplayBuffer(cfg.buffer_capacity, kind, adim)
        self.env = make_env(cfg.env, self.streams["env"], cfg.frame_skip)
        self.eval_env = make_env(cfg.env, self.streams["eval_env"], cfg.frame_skip)

        self.env_steps = 0
        self.episode_id = 0
        self.wm_updates = 0
        self.agent_updates = 0
        self.obs: np.ndarray | None = None
        self.context: list = []  # mixed tokens of the current episode, (1, D) each
        self.ep_return = 0.0
        self.last = {
            "actor_loss": None, "critic_loss": None, "entropy": None, "S": None,
            "eval_return": None, "perplexity": None,
        }
        self.metrics_path = os.path.join(out_dir, "metrics.csv")
        self._metrics_file = None

    # ---------------------------------------------------------------- acting

    def _policy_hidden(self) -> torch.Tensor:
        if not self.context:
            return torch.zeros((1, self.cfg.embed_dim), dtype=self.dtype)
        tokens = torch.cat(self.context, dim=0).unsqueeze(0)
        return self.wm.backbone.forward_sequence(tokens)[:, -1]

    def _act(self, obs: np.ndarray, action_stream: RngStream, context: list):
        """Pick an action from the sliding-window agent state; extends context."""
        obs_t = torch.from_numpy(obs).to(self.dtype).unsqueeze(0)
        with torch.no_grad():
            latent = self.wm.encode(obs_t, None, sample_mode="mode")
            if context:
                tokens = torch.cat(context, dim=0).unsqueeze(0)
                hidden = self.wm.backbone.forward_sequence(tokens)[:, -1]
            else:
                hidden = torch.zeros((1, self.cfg.embed_dim), dtype=self.dtype)
            feat = torch.cat([latent.flat, hidden], dim=-1)
            env_a, _ = self.actor.sample(feat, action_stream)
            token = self.wm.mix(latent.sample, env_a)
        context.append(token)
        del context[: -self.cfg.env_context]
        if self.action_kind == "discrete":
            return int(env_a.item())
        return env_a[0].numpy().astype(np.float64)

    def _random_action(self):
        if self.action_kind == "discrete":
            return int(self.streams["prefill"].integers(0, self.action_dim))
        return self.streams["prefill"].uniform((self.action_dim,), -1.0, 1.0)

    # -------------------------------------------------------------- updates

    def train_world_model(self) -> dict:
        cfg = self.cfg
        self.wm.train()
        batch = self.replay.sample_batch(
            cfg.batch_size, cfg.batch_length, self.streams["replay"], self.dtype
        )
        loss_streams = {
            "latent": self.streams["latent"],
            "mask": self.streams["mask"],
            "noise": self.streams["noise"],
        }
        breakdown = self.wm.loss(
            batch.obs, batch.actions, batch.rewards, batch.terminations, batch.mask,
            loss_streams, beta_dyn=cfg.beta_dyn, beta_rep=cfg.beta_rep,
            recon_coeff=cfg.recon_coeff,
        )
        self.wm_opt.zero_grad()
        breakdown.total.backward()
        torch.nn.utils.clip_grad_norm_(self.wm.parameters(), cfg.wm_grad_clip)
        self.wm_opt.step()
        out = {k: float(v.detach()) for k, v in breakdown.parts.items()}
        out["loss_total"] = float(breakdown.total.detach())
        return out

    def train_agent(self) -> dict:
        cfg = self.cfg
        self.wm.eval()
        stream = self.streams["imagination"]
        batch = self.replay.sample_batch(
            cfg.imagination_batch, cfg.imagination_context, stream, self.dtype
        )
        cond = condition(
            self.wm, batch.obs, batch.actions, stream,
            cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions,
        )
        traj = imagine(
            self.wm, self.actor, cond, cfg.imagination_horizon, stream,
            cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions,
        )
        with torch.no_grad():
            values = self.critic.value(traj.feats)
        returns = lambda_returns(
            traj.rewards, traj.continues, values, cfg.discount, cfg.return_lambda
        )
        self.normalizer.update(returns)
        horizon = traj.rewards.shape[1]
        weights = torch.ones_like(traj.rewards)
        if horizon > 1:
            weights[:, 1:] = torch.cumprod(traj.continues[:, :-1], dim=1)
        states = traj.feats[:, :-1]
        closs = critic_loss(self.critic, self.ema_critic, states, returns, weights)
        aloss = actor_loss(
            self.actor, states, traj.raw_actions, returns, values[:, :-1],
            self.normalizer.scale, cfg.entropy_coeff, weights,
        )
        self.ac_opt.zero_grad()
        (closs + aloss).backward()
        torch.nn.utils.clip_grad_norm_(self.ac_params, cfg.ac_grad_clip)
        self.ac_opt.step()
        ema_update(self.critic, self.ema_critic, cfg.critic_ema_decay)
        with torch.no_grad():
            ent = (self.actor.entropy(states) * weights).sum() / weights.sum().clamp(min=1.0)
        return {
            "actor_loss": float(aloss.detach()),
            "critic_loss": float(closs.detach()),
            "entropy": float(ent),
            "S": self.normalizer.s,
        }

    # ------------------------------------------------------------ evaluation

    def evaluate(self) -> float:
        """Mean return over eval episodes; separate env and action streams."""
        self.wm.eval()
        total = 0.0
        for _ in range(self.cfg.eval_episodes):
            obs = self.eval_env.reset()
            context: list = []
            done = False
            ep = 0.0
            while not done:
                action = self._act(obs, self.streams["eval_action"], context)
                obs, reward, done = self.eval_env.step(action)
                ep += reward
            total += ep
        return total / self.cfg.eval_episodes

    def eval_perplexity(self) -> float:
        b = min(8, self.cfg.batch_size)
        t = min(16, self.cfg.batch_length)
        batch = self.replay.sample_batch(b, t, self.streams["eval_ppl"], self.dtype)
        return self.wm.perplexity(batch.obs, batch.actions, batch.mask)

    # ------------------------------------------------------------- main loop

    def _metrics(self):
        if self._metrics_file is None:
            new = not os.path.exists(self.metrics_path)
            self._metrics_file = open(self.metrics_path, "a")
            if new:
                self._metrics_file.write(",".join(METRIC_COLUMNS) + "\n")
        return self._metrics_file

    def write_row(self, row: dict) -> str:
        line = ",".join(_fmt(row.get(c)) for c in METRIC_COLUMNS)
        f = self._metrics()
        f.write(line + "\n")
        f.flush()
        return line

    def step(self) -> dict | None:
        """One environment step plus any scheduled updates; returns the row."""
        cfg = self.cfg
        if self.obs is None:
            self.obs = self.env.reset()
            self.context = []
            self.episode_id += 1
            self.ep_return = 0.0
        obs_before = self.obs
        if self.env_steps < cfg.learning_starts:
            action = self._random_action()
            self.context = []
        else:
            self.wm.eval()
            action = self._act(obs_before, self.streams["action"], self.context)
        next_obs, reward, termination = self.env.step(action)
        self.replay.push(obs_before, action, reward, termination, self.episode_id)
        self.ep_return += reward
        self.env_steps += 1
        self.obs = None if termination else next_obs

        if self.env_steps < cfg.learning_starts:
            return None
        row = None
        if self.env_steps % cfg.update_world_model_every == 0:
            wm_metrics = self.train_world_model()
            self.wm_updates += 1
            row = {"step": self.env_steps}
            row.update(wm_metrics)
        if self.env_steps % cfg.update_agent_every == 0:
            self.last.update(self.train_agent())
            self.agent_updates += 1
        if cfg.eval_every and self.env_steps % cfg.eval_every == 0:
            self.last["eval_return"] = self.evaluate()
            self.last["perplexity"] = self.eval_perplexity()
            self.last["eval_is_fresh"] = True
        if row is not None:
            row["actor_loss"] = self.last["actor_loss"]
            row["critic_loss"] = self.last["critic_loss"]
            row["entropy"] = self.last["entropy"]
            row["S"] = self.last["S"]
            if self.last.pop("eval_is_fresh", None):
                row["eval_return"] = self.last["eval_return"]
                row["perplexity"] = self.last["perplexity"]
            self.write_row(row)
        if cfg.checkpoint_every and self.env_steps % cfg.checkpoint_every == 0:
            self.save(os.path.join(self.out_dir, f"ckpt_{self.env_steps}.bin"))
        return row

    def run(self, n_steps: int, final_checkpoint: str | None = None,
            wallclock_limit: float | None = None) -> None:
        start = time.monotonic()
        for _ in range(n_steps):
            self.step()
            if wallclock_limit is not None and time.monotonic() - start > wallclock_limit:
                break
        if final_checkpoint is not None:
            self.save(os.path.join(self.out_dir, final_checkpoint))

    # ------------------------------------------------------------ checkpoint

    def _module_arrays(self, prefix: str, module: torch.nn.Module) -> dict:
        return {
            f"{prefix}/{name}": tensor.detach().cpu().numpy()
            for name, tensor in module.state_dict().items()
        }

    def _optimizer_arrays(self, prefix: str, opt, params) -> dict:
        arrays = {}
        for i, p in enumerate(params):
            state = opt.state.get(p)
            if not state:
                continue
            arrays[f"{prefix}/{i}/exp_avg"] = state["exp_avg"].detach().cpu().numpy()
            arrays[f"{prefix}/{i}/exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
            arrays[f"{prefix}/{i}/step"] = np.asarray(float(state["step"]), dtype=np.float64)
        return arrays

    def save(self, path: str) -> None:
        arrays = {}
        arrays.update(self._module_arrays("wm", self.wm))
        arrays.update(self._module_arrays("actor", self.actor))
        arrays.update(self._module_arrays("critic", self.critic))
        arrays.update(self._module_arrays("ema_critic", self.ema_critic))
        arrays.update(self._optimizer_arrays("optwm", self.wm_opt, list(self.wm.parameters())))
        arrays.update(self._optimizer_arrays("optac", self.ac_opt, self.ac_params))
        arrays.update(self.replay.state_arrays())
        if self.context:
            arrays["live/context"] = torch.cat(self.context, dim=0).numpy()
        if self.obs is not None:
            arrays["live/obs"] = np.rint(self.obs * 255.0).astype(np.uint8)
        meta = {
            "config": self.cfg.to_dict(),
            "step": self.env_steps,
            "episode_id": self.episode_id,
            "wm_updates": self.wm_updates,
            "agent_updates": self.agent_updates,
            "ep_return": self.ep_return,
            "rng": {name: s.state_dict() for name, s in self.streams.items()},
            "env_state": self.env.state(),
            "eval_env_state": self.eval_env.state(),
            "normalizer": self.normalizer.state(),
            "replay_meta": self.replay.meta(),
            "last": {k: v for k, v in self.last.items() if k != "eval_is_fresh"},
        }
        save_checkpoint(path, meta, arrays)

    def _load_module(self, prefix: str, module: torch.nn.Module, arrays: dict) -> None:
        state = {}
        for name, tensor in module.state_dict().items():
            arr = arrays[f"{prefix}/{name}"]
            state[name] = torch.from_numpy(arr.copy()).to(tensor.dtype)
        module.load_state_dict(state)

    def _load_optimizer(self, prefix: str, opt, params, arrays: dict) -> None:
        for i, p in enumerate(params):
            key = f"{prefix}/{i}/exp_avg"
            if key not in arrays:
                continue
            opt.state[p] = {
                "step": torch.tensor(float(arrays[f"{prefix}/{i}/step"])),
                "exp_avg": torch.from_numpy(arrays[key].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}/{i}/exp_avg_sq"].copy()).to(p.dtype),
            }

    @classmethod
    def load(cls, path: str, out_dir: str) -> "Trainer":
        meta, arrays = load_checkpoint(path)
        cfg = Config.from_dict(meta["config"])
        tr = cls(cfg, out_dir)
        tr._load_module("wm", tr.wm, arrays)
        tr._load_module("actor", tr.actor, arrays)
        tr._load_module("critic", tr.critic, arrays)
        tr._load_module("ema_critic", tr.ema_critic, arrays)
        tr._load_optimizer("optwm", tr.wm_opt, list(tr.wm.parameters()), arrays)
        tr._load_optimizer("optac", tr.ac_opt, tr.ac_params, arrays)
        tr.replay.load_state(arrays, meta["replay_meta"])
        for name, stream in tr.streams.items():
            stream.load_state_dict(meta["rng"][name])
        tr.env.load_state(meta["env_state"])
        tr.eval_env.load_state(meta["eval_env_state"])
        tr.normalizer.load_state(meta["normalizer"])
        tr.env_steps = meta["step"]
        tr.episode_id = meta["episode_id"]
        tr.wm_updates = meta["wm_updates"]
        tr.agent_updates = meta["agent_updates"]
        tr.ep_return = meta["ep_return"]
        tr.last.update(meta["last"])
        if "live/context" in arrays:
            ctx = torch.from_numpy(arrays["live/context"].copy()).to(tr.dtype)
            tr.context = [ctx[i:i + 1] for i in range(ctx.shape[0])]
        if "live/obs" in arrays:
            tr.obs = arrays["live/obs"].astype(np.float32) / 255.0
        return tr

    def close(self) -> None:
        if self._metrics_file is not None:
            self._metrics_file.close()
            self._metrics_file = None


class LoadedModel:
    """Checkpointed model unpacked without the training loop around it."""

    def __init__(self, cfg: Config, wm: WorldModel, actor: Actor, critic: Critic,
                 meta: dict):
        self.cfg = cfg
        self.wm = wm
        self.actor = actor
        self.critic = critic
        self.meta = meta
        self.action_kind, self.action_dim = action_spec(cfg.env)


def load_model(path: str) -> LoadedModel:
    """Rebuild world model, actor and critic from a checkpoint file."""
    meta, arrays = load_checkpoint(path)
    cfg = Config.from_dict(meta["config"])
    kind, adim = action_spec(cfg.env)
    dtype = torch_dtype(cfg.precision)
    scratch = RngStream(0, "load_model")
    wm = build_world_model(sizes_from_config(cfg, kind, adim), scratch, dtype)
    feat_dim = 32 * 32 + cfg.embed_dim
    actor = Actor(feat_dim, cfg.embed_dim, kind, adim).to(dtype)
    critic = Critic(feat_dim, cfg.embed_dim, wm.buckets).to(dtype)
    for prefix, module in (("wm", wm), ("actor", actor), ("critic", critic)):
        state = {}
        for name, tensor in module.state_dict().items():
            state[name] = torch.from_numpy(arrays[f"{prefix}/{name}"].copy()).to(tensor.dtype)
        module.load_state_dict(state)
    wm.eval()
    return LoadedModel(cfg, wm, actor, critic, meta)


def run_prior_ablation(cfg: Config, collect_steps: int = 600,
                       train_updates: int = 30, holdout_steps: int = 128) -> dict:
    """Train a masked-token prior and an MLP prior on identical streams.

    Transitions are collected once with a random policy; both world models
    see the same batch sequence (fresh but identically labelled streams), and
    each reports teacher-forced next-token perplexity on a shared held-out
    segment.
    """
    kind, adim = action_spec(cfg.env)
    root = RngStream(cfg.seed, "ablation")
    buffer = ReplayBuffer(collect_steps + holdout_steps + 1, kind, adim)
    env = make_env(cfg.env, root.spawn("env"), cfg.frame_skip)
    act_stream = root.spawn("actions")
    episode = 0
    obs = None
    for _ in range(collect_steps + holdout_steps):
        if obs is None:
            obs = env.reset()
            episode += 1
        if kind == "discrete":
            action = int(act_stream.integers(0, adim))
        else:
            action = act_stream.uniform((adim,), -1.0, 1.0)
        nxt, reward, term = env.step(action)
        buffer.push(obs, action, reward, term, episode)
        obs = None if term else nxt

    dtype = torch_dtype(cfg.precision)
    holdout = buffer.sample_batch(4, min(16, cfg.batch_length), root.spawn("holdout"), dtype)
    results = {}
    for prior_kind in ("maskgit", "mlp"):
        sizes = sizes_from_config(cfg, kind, adim)
        sizes.prior_kind = prior_kind
        wm = build_world_model(sizes, root.spawn("init"), dtype)
        opt = torch.optim.Adam(wm.parameters(), lr=cfg.wm_lr, betas=(0.9, 0.999), eps=1e-8)
        streams = {
            "latent": root.spawn(f"{prior_kind}/latent"),
            "mask": root.spawn(f"{prior_kind}/mask"),
            "noise": root.spawn(f"{prior_kind}/noise"),
        }
        sample_stream = root.spawn(f"{prior_kind}/replay")
        wm.train()
        for _ in range(train_updates):
            batch = buffer.sample_batch(cfg.batch_size, cfg.batch_length, sample_stream, dtype)
            breakdown = wm.loss(
                batch.obs, batch.actions, batch.rewards, batch.terminations,
                batch.mask, streams, beta_dyn=cfg.beta_dyn, beta_rep=cfg.beta_rep,
                recon_coeff=cfg.recon_coeff,
            )
            opt.zero_grad()
            breakdown.total.backward()
            torch.nn.utils.clip_grad_norm_(wm.parameters(), cfg.wm_grad_clip)
            opt.step()
        results[prior_kind] = wm.perplexity(holdout.obs, holdout.actions, holdout.mask)
    return results
