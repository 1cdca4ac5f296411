"""Open-loop video prediction evaluation and episode collection.

The protocol: encode a short context of real frames, roll the dynamics
forward with the episode's recorded actions (no policy), decode the
predicted latents, and compare against the real continuation.  Quality is
reported as per-frame pixel MSE plus the prior's perplexity on the true
tokens along the predicted trajectory.
"""
from __future__ import annotations

import numpy as np
import torch

from .agent import Actor
from .dumps import read_arrays, write_arrays
from .envs import action_spec, make_env
from .imagine import condition
from .numerics import RngStream
from .prior import draft_and_revise, prior_token_log_probs
from .worldmodel import WorldModel


def collect_episodes(env_name: str, n_episodes: int, stream: RngStream,
                     wm: WorldModel | None = None, actor: Actor | None = None,
                     env_context: int = 16, frame_skip: int = 1,
                     out_path: str | None = None):
    """Roll episodes and record (obs, action, reward, termination) tensors.

    With a world model and actor the policy acts from the usual sliding
    window; otherwise actions are uniform random.  Episodes are padded to the
    longest length with a validity mask.  Returns (meta, arrays) and
    optionally writes them as a dump file.
    """
    kind, adim = action_spec(env_name)
    env = make_env(env_name, stream.spawn("env"), frame_skip)
    act_stream = stream.spawn("actions")
    episodes = []
    for _ in range(n_episodes):
        obs = env.reset()
        frames, actions, rewards, terms = [], [], [], []
        context: list = []
        done = False
        while not done:
            if wm is not None and actor is not None:
                wm.eval()
                dtype = wm.buckets.centers.dtype
                obs_t = torch.from_numpy(obs).to(dtype).unsqueeze(0)
                with torch.no_grad():
                    latent = wm.encode(obs_t, None, sample_mode="mode")
                    if context:
                        tokens = torch.cat(context, dim=0).unsqueeze(0)
                        hidden = wm.backbone.forward_sequence(tokens)[:, -1]
                    else:
                        hidden = torch.zeros((1, tokens_dim(wm)), dtype=dtype)
                    feat = torch.cat([latent.flat, hidden], dim=-1)
                    env_a, _ = actor.sample(feat, act_stream)
                    context.append(wm.mix(latent.sample, env_a))
                    del context[:-env_context]
                if kind == "discrete":
                    action = int(env_a.item())
                else:
                    action = env_a[0].numpy().astype(np.float64)
            elif kind == "discrete":
                action = int(act_stream.integers(0, adim))
            else:
                action = act_stream.uniform((adim,), -1.0, 1.0)
            frames.append(np.rint(obs * 255.0).astype(np.uint8))
            actions.append(action)
            nxt, reward, done = env.step(action)
            rewards.append(reward)
            terms.append(done)
            obs = nxt
        episodes.append((frames, actions, rewards, terms))

    lengths = [len(ep[0]) for ep in episodes]
    t_max = max(lengths)
    n = len(episodes)
    obs_arr = np.zeros((n, t_max, 3, 64, 64), dtype=np.uint8)
    if kind == "discrete":
        act_arr = np.zeros((n, t_max), dtype=np.int64)
    else:
        act_arr = np.zeros((n, t_max, adim), dtype=np.float32)
    rew_arr = np.zeros((n, t_max), dtype=np.float32)
    term_arr = np.zeros((n, t_max), dtype=np.uint8)
    mask_arr = np.zeros((n, t_max), dtype=np.float32)
    for i, (frames, actions, rewards, terms) in enumerate(episodes):
        t = len(frames)
        obs_arr[i, :t] = np.stack(frames)
        act_arr[i, :t] = np.stack(actions) if kind == "continuous" else np.asarray(actions)
        rew_arr[i, :t] = np.asarray(rewards, dtype=np.float32)
        term_arr[i, :t] = np.asarray(terms, dtype=np.uint8)
        mask_arr[i, :t] = 1.0
    meta = {
        "env": env_name, "action_kind": kind, "action_dim": adim,
        "lengths": lengths, "frame_skip": frame_skip,
    }
    arrays = {
        "obs": obs_arr, "actions": act_arr, "rewards": rew_arr,
        "terminations": term_arr, "mask": mask_arr,
    }
    if out_path is not None:
        write_arrays(out_path, meta, arrays)
    return meta, arrays


def tokens_dim(wm: WorldModel) -> int:
    return wm.backbone.pos.table.shape[-1]


def open_loop_predict(wm: WorldModel, obs: torch.Tensor, actions: torch.Tensor,
                      context: int, horizon: int, stream: RngStream,
                      t_draft: int = 1, t_revise: int = 1, repetitions: int = 1):
    """Condition on real frames, roll forward with recorded actions.

    Returns (frames, hiddens) where frames (B, horizon, 3, 64, 64) are the
    decoded predictions for steps context..context+horizon-1 and hiddens
    (B, horizon, D) are the backbone states each prediction conditioned on.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1 for open-loop prediction")
    with torch.no_grad():
        cond = condition(wm, obs[:, :context], actions[:, :context], stream,
                         t_draft, t_revise, repetitions)
        cache = cond.cache
        latent = cond.state.latent
        hiddens = [cond.state.hidden]
        latents = [latent]
        for step in range(1, horizon):
            action = actions[:, context + step - 1]
            token = wm.mix(latent, action).unsqueeze(1)
            hidden = wm.backbone.forward_sequence(token, cache=cache)[:, -1]
            latent = draft_and_revise(wm.prior, hidden, stream,
                                      t_draft, t_revise, repetitions)
            hiddens.append(hidden)
            latents.append(latent)
        frames = wm.decode(torch.stack(latents, dim=1))
    return frames, torch.stack(hiddens, dim=1)


def eval_video(wm: WorldModel, episodes_path: str, context: int = 8,
               horizon: int = 48, seed: int = 0,
               dump_path: str | None = None,
               t_draft: int = 1, t_revise: int = 1, repetitions: int = 1) -> dict:
    """Open-loop prediction report over stored episodes.

    Episodes shorter than context raise; episodes shorter than
    context + horizon are skipped (at least one must qualify).  With
    horizon 0 the report degenerates to the codec reconstruction error of
    the context frames and no perplexity.
    """
    meta, arrays = read_arrays(episodes_path)
    lengths = meta["lengths"]
    if context > max(lengths):
        raise ValueError(
            f"context {context} longer than the longest stored episode ({max(lengths)})"
        )
    wm.eval()
    dtype = wm.buckets.centers.dtype
    keep = [i for i, t in enumerate(lengths) if t >= context + horizon]
    if not keep:
        raise ValueError("no stored episode long enough for context + horizon")
    obs = torch.from_numpy(arrays["obs"][keep].copy()).to(dtype) / 255.0
    actions = torch.from_numpy(arrays["actions"][keep].copy())
    if actions.dtype.is_floating_point:
        actions = actions.to(dtype)

    if horizon == 0:
        with torch.no_grad():
            ctx = obs[:, :context]
            latent = wm.encode(ctx, None, sample_mode="mode")
            recon = wm.decode(latent.sample)
            err = ((recon - ctx) ** 2).mean(dim=(-1, -2, -3))
        report = {
            "episodes": len(keep), "context": context, "horizon": 0,
            "mse": float(err.mean()), "mse_per_step": err.mean(dim=0).tolist(),
            "perplexity": None,
        }
        if dump_path is not None:
            write_arrays(dump_path, report, {
                "frames": np.rint(recon.numpy() * 255.0).astype(np.uint8),
                "mse_per_step": err.mean(dim=0).numpy().astype(np.float64),
            })
        return report

    stream = RngStream(seed, "eval_video")
    frames, hiddens = open_loop_predict(
        wm, obs, actions, context, horizon, stream, t_draft, t_revise, repetitions
    )
    target = obs[:, context:context + horizon]
    with torch.no_grad():
        err = ((frames - target) ** 2).mean(dim=(-1, -2, -3))
        true_tokens = wm.encode(target, None, sample_mode="mode").indices
        logp = prior_token_log_probs(wm.prior, hiddens, true_tokens)
        ppl = float(torch.exp(-logp.mean()))
    report = {
        "episodes": len(keep), "context": context, "horizon": horizon,
        "mse": float(err.mean()), "mse_per_step": err.mean(dim=0).tolist(),
        "perplexity": ppl,
    }
    if dump_path is not None:
        write_arrays(dump_path, report, {
            "frames": np.rint(frames.clamp(0.0, 1.0).numpy() * 255.0).astype(np.uint8),
            "mse_per_step": err.mean(dim=0).numpy().astype(np.float64),
        })
    return report
