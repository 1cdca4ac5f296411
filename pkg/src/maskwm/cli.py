"""Command-line surface: train, imagine, eval-video, eval-stats, plot."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import metrics as metrics_mod
from . import plots
from .config import ConfigError, load_config
from .dumps import write_arrays
from .envs import make_env
from .imagine import condition, imagine
from .numerics import RngStream
from .train import Trainer, load_model
from .video import collect_episodes, eval_video


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskwm")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop")
    p_train.add_argument("--config", default=None, help="key=value config file")
    p_train.add_argument("--steps", type=int, required=True, help="env steps to run")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="config override, highest precedence")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")

    p_imag = sub.add_parser("imagine", help="roll the policy inside the model")
    p_imag.add_argument("--ckpt", required=True)
    p_imag.add_argument("--context", type=int, required=True, help="real steps to condition on")
    p_imag.add_argument("--horizon", type=int, required=True, help="imagined steps")
    p_imag.add_argument("--dump", required=True, help="output dump path")
    p_imag.add_argument("--seed", type=int, default=0)

    p_vid = sub.add_parser("eval-video", help="open-loop prediction report")
    p_vid.add_argument("--ckpt", required=True)
    p_vid.add_argument("--episodes", required=True, help="stored episodes dump")
    p_vid.add_argument("--context", type=int, default=8)
    p_vid.add_argument("--horizon", type=int, default=48)
    p_vid.add_argument("--collect", type=int, default=0, metavar="N",
                       help="first collect N fresh episodes into --episodes")
    p_vid.add_argument("--dump", default=None, help="optional predicted-frame dump")
    p_vid.add_argument("--seed", type=int, default=0)

    p_stats = sub.add_parser("eval-stats", help="aggregate a score table")
    p_stats.add_argument("--scores", required=True, help="score CSV")
    p_stats.add_argument("--baseline", default=None, help="baseline column name")
    p_stats.add_argument("--out", required=True, help="output directory")
    p_stats.add_argument("--seed", type=int, default=0, help="bootstrap seed")

    p_plot = sub.add_parser("plot", help="render training curves")
    p_plot.add_argument("--metrics", required=True, help="metrics CSV from train")
    p_plot.add_argument("--out", required=True, help="output directory")
    return parser


def cmd_train(args) -> int:
    cfg = load_config(args.config, os.environ, args.set)
    if args.resume:
        trainer = Trainer.load(args.resume, args.out)
    else:
        trainer = Trainer(cfg, args.out)
    try:
        trainer.run(args.steps, final_checkpoint="ckpt_final.bin")
    finally:
        trainer.close()
    print(f"trained to step {trainer.env_steps}; outputs in {args.out}")
    return 0


def _collect_context(model, env, stream, context: int):
    """Roll the policy until one episode yields `context` consecutive steps."""
    wm, actor, cfg = model.wm, model.actor, model.cfg
    dtype = wm.buckets.centers.dtype
    for _ in range(100):
        obs = env.reset()
        frames, actions = [], []
        tokens: list = []
        done = False
        while len(frames) < context and not done:
            obs_t = torch.from_numpy(obs).to(dtype).unsqueeze(0)
            with torch.no_grad():
                latent = wm.encode(obs_t, None, sample_mode="mode")
                if tokens:
                    stacked = torch.cat(tokens, dim=0).unsqueeze(0)
                    hidden = wm.backbone.forward_sequence(stacked)[:, -1]
                else:
                    hidden = torch.zeros((1, cfg.embed_dim), dtype=dtype)
                feat = torch.cat([latent.flat, hidden], dim=-1)
                env_a, _ = actor.sample(feat, stream)
                tokens.append(wm.mix(latent.sample, env_a))
                del tokens[: -cfg.env_context]
            if model.action_kind == "discrete":
                action = int(env_a.item())
            else:
                action = env_a[0].numpy().astype(np.float64)
            frames.append(obs)
            actions.append(action)
            obs, _, done = env.step(action)
        if len(frames) == context:
            return frames, actions
    raise RuntimeError("episodes keep terminating before the requested context")


def cmd_imagine(args) -> int:
    if args.context < 1 or args.horizon < 1:
        raise SystemExit("--context and --horizon must be >= 1")
    model = load_model(args.ckpt)
    cfg = model.cfg
    if args.context + args.horizon > cfg.max_context:
        raise SystemExit(
            f"context + horizon = {args.context + args.horizon} exceeds "
            f"max context {cfg.max_context}"
        )
    stream = RngStream(args.seed, "cli/imagine")
    env = make_env(cfg.env, stream.spawn("env"), cfg.frame_skip)
    frames, actions = _collect_context(model, env, stream.spawn("context"), args.context)
    dtype = model.wm.buckets.centers.dtype
    obs = torch.from_numpy(np.stack(frames)).to(dtype).unsqueeze(0)
    if model.action_kind == "discrete":
        acts = torch.tensor([actions], dtype=torch.int64)
    else:
        acts = torch.from_numpy(np.stack(actions)).to(dtype).unsqueeze(0)
    cond = condition(model.wm, obs, acts, stream.spawn("condition"),
                     cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
    traj = imagine(model.wm, model.actor, cond, args.horizon, stream.spawn("imagine"),
                   cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
    with torch.no_grad():
        decoded = model.wm.decode(
            torch.nn.functional.one_hot(traj.latents, 32).to(dtype)
        )
    meta = {
        "context": args.context, "horizon": args.horizon, "env": cfg.env,
        "checkpoint_step": model.meta.get("step"),
    }
    if model.action_kind == "discrete":
        env_actions = traj.env_actions.numpy().astype(np.int64)
    else:
        env_actions = traj.env_actions.numpy().astype(np.float32)
    write_arrays(args.dump, meta, {
        "context_obs": np.rint(np.stack(frames) * 255.0).astype(np.uint8),
        "latents": traj.latents.numpy().astype(np.int64),
        "frames": np.rint(decoded.clamp(0.0, 1.0).numpy() * 255.0).astype(np.uint8),
        "env_actions": env_actions,
        "rewards": traj.rewards.numpy().astype(np.float32),
        "continues": traj.continues.numpy().astype(np.float32),
    })
    print(f"imagined {args.horizon} steps from {args.context} real steps -> {args.dump}")
    return 0


def cmd_eval_video(args) -> int:
    model = load_model(args.ckpt)
    if args.collect:
        stream = RngStream(args.seed, "cli/eval_video_collect")
        collect_episodes(model.cfg.env, args.collect, stream, wm=model.wm,
                         actor=model.actor, env_context=model.cfg.env_context,
                         frame_skip=model.cfg.frame_skip, out_path=args.episodes)
    report = eval_video(model.wm, args.episodes, context=args.context,
                        horizon=args.horizon, seed=args.seed, dump_path=args.dump,
                        t_draft=model.cfg.draft_rounds,
                        t_revise=model.cfg.revise_rounds,
                        repetitions=model.cfg.repetitions)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_eval_stats(args) -> int:
    table = metrics_mod.load_score_table(args.scores)
    report = metrics_mod.stats_report(table, baseline=args.baseline)
    hns = table.hns("score")
    stream = RngStream(args.seed, "cli/bootstrap")
    for stat in ("mean", "iqm"):
        fn = {"mean": lambda h: float(np.mean(metrics_mod._pooled(h))),
              "iqm": lambda h: metrics_mod.iqm(metrics_mod._pooled(h))}[stat]
        lo, hi = metrics_mod.stratified_bootstrap_ci(hns, fn, stream.spawn(stat))
        report.setdefault("ci95", {})[stat] = [lo, hi]
    os.makedirs(args.out, exist_ok=True)
    outputs = plots.plot_aggregates(report, args.out)
    taus = np.linspace(0.0, 2.0, 81)
    pooled = metrics_mod._pooled(hns)
    profiles = {"score": metrics_mod.performance_profile(pooled, taus)}
    if args.baseline:
        base_pooled = metrics_mod._pooled(table.hns(args.baseline))
        profiles[args.baseline] = metrics_mod.performance_profile(base_pooled, taus)
    outputs += plots.plot_profile(profiles, taus, args.out)
    if args.baseline:
        outputs += plots.plot_improvement(
            report["probability_of_improvement"], args.baseline, args.out
        )
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    outputs.append(report_path)
    print(json.dumps(report, indent=2, sort_keys=True))
    print(f"wrote {len(outputs)} files to {args.out}")
    return 0


def cmd_plot(args) -> int:
    outputs = plots.plot_metrics(args.metrics, args.out)
    print(f"wrote {len(outputs)} files to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "imagine": cmd_imagine,
    "eval-video": cmd_eval_video,
    "eval-stats": cmd_eval_stats,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
