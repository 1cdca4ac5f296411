"""Longer wm-only training: does reward prediction come online once the codec matures?"""
import time
import numpy as np
import torch

from maskwm.config import load_config
from maskwm.train import Trainer
from maskwm.imagine import condition, imagine
from maskwm.agent import lambda_returns

torch.manual_seed(0)
cfg = load_config("configs/smoke_gridworld.json", env={}, sets=["learning_starts=1000000", "seed=0"])
tr = Trainer(cfg, "calib/diag_out2")
tr.run(6000)
rews = tr.replay.rewards[: len(tr.replay)]
print("buffer reward frames: key=%d door=%d" % ((np.abs(rews - 0.5) < 1e-6).sum(), (np.abs(rews - 1.0) < 1e-6).sum()), flush=True)

wm = tr.wm

def probe(tag):
    wm.eval()
    preds_pos, trues, ents, recons = [], [], [], []
    with torch.no_grad():
        for _ in range(60):
            batch = tr.replay.sample_batch(8, 16, tr.streams["replay"], tr.dtype)
            flat_obs = batch.obs.flatten(0, 1)
            latent = wm.encode(flat_obs, None, sample_mode="mode")
            ents.append(float(-(latent.probs * latent.probs.clamp(min=1e-12).log()).sum(-1).mean()))
            recons.append(float(((wm.decode(latent.flat) - flat_obs) ** 2).mean()))
            sample = latent.sample.reshape(8, 16, *latent.sample.shape[1:])
            tokens = wm.mix(sample, batch.actions)
            hidden = wm.backbone.forward_sequence(tokens)
            pred = wm.predict_reward(hidden)
            pos = batch.rewards > 0.25
            preds_pos += pred[pos].tolist()
            trues += batch.rewards[pos].tolist()
    # imagination probe with the untrained (uniform) actor
    stream = tr.streams["imagination"]
    all_r, all_ret = [], []
    with torch.no_grad():
        for _ in range(4):
            batch = tr.replay.sample_batch(cfg.imagination_batch, cfg.imagination_context, stream, tr.dtype)
            c = condition(wm, batch.obs, batch.actions, stream, cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
            traj = imagine(wm, tr.actor, c, cfg.imagination_horizon, stream,
                           cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
            values = tr.critic.value(traj.feats)
            ret = lambda_returns(traj.rewards, traj.continues, values, cfg.discount, cfg.return_lambda)
            all_r.append(traj.rewards.flatten()); all_ret.append(ret.flatten())
    r = torch.cat(all_r); ret = torch.cat(all_ret)
    p5, p95 = torch.quantile(ret, torch.tensor([0.05, 0.95], dtype=ret.dtype))
    print("[%s] n_rewframes=%d pred_pos mean %.3f std %.3f | ent %.2f recon %.5f | imag rew max %.3f frac>.25 %.4f | ret range %.4f"
          % (tag, len(trues), np.mean(preds_pos) if preds_pos else -1, np.std(preds_pos) if preds_pos else -1,
             np.mean(ents), np.mean(recons), r.max(), (r > 0.25).float().mean(), p95 - p5), flush=True)

t0 = time.time()
for i in range(4000):
    row = tr.train_world_model()
    if (i + 1) % 800 == 0:
        print("upd %d (%.0fs) %s" % (i + 1, time.time() - t0,
              {k: round(v, 4) for k, v in row.items()}), flush=True)
        probe("after %d" % (i + 1))
