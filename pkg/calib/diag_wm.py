"""Offline diagnosis: can the WM learn gridworld rewards from a random buffer,
and do imagined rollouts ever see them?"""
import time
import numpy as np
import torch

from maskwm.config import load_config
from maskwm.train import Trainer
from maskwm.imagine import condition, imagine
from maskwm.agent import lambda_returns

torch.manual_seed(0)
cfg = load_config("configs/smoke_gridworld.json", env={}, sets=["learning_starts=1000000", "seed=0"])
tr = Trainer(cfg, "calib/diag_out")
t0 = time.time()
tr.run(4000)   # pure random collection, no updates
print(f"collected 4000 steps in {time.time()-t0:.1f}s, buffer={len(tr.replay)}")

# how many reward frames does the buffer hold?
rews = tr.replay.rewards[: len(tr.replay)]
print("buffer reward frames: key=%d door=%d" % ((np.abs(rews - 0.5) < 1e-6).sum(), (np.abs(rews - 1.0) < 1e-6).sum()))

t0 = time.time()
for i in range(800):
    row = tr.train_world_model()
    if i % 200 == 0:
        print(i, {k: round(v, 4) for k, v in row.items() if k.startswith("loss")})
print(f"800 wm updates in {time.time()-t0:.1f}s")

# teacher-forced reward predictions on reward frames
wm = tr.wm
wm.eval()
hits, preds_pos, preds_zero = [], [], []
with torch.no_grad():
    for _ in range(40):
        batch = tr.replay.sample_batch(8, 16, tr.streams["replay"], tr.dtype)
        latent = wm.encode(batch.obs.flatten(0, 1), None, sample_mode="mode")
        sample = latent.sample.reshape(8, 16, *latent.sample.shape[1:])
        tokens = wm.mix(sample, batch.actions)
        hidden = wm.backbone.forward_sequence(tokens)
        pred = wm.predict_reward(hidden)
        pos = batch.rewards > 0.25
        preds_pos += pred[pos].tolist()
        preds_zero += pred[(~pos) & batch.mask.bool()].flatten().tolist()[:50]
        hits += batch.rewards[pos].tolist()
print("teacher-forced on %d reward frames: true mean %.3f pred mean %.3f pred std %.3f"
      % (len(hits), np.mean(hits) if hits else -1, np.mean(preds_pos) if preds_pos else -1,
         np.std(preds_pos) if preds_pos else -1))
print("  zero-frame pred mean %.4f abs-max %.4f" % (np.mean(preds_zero), np.max(np.abs(preds_zero))))

# imagination-time rewards under the (untrained, near-uniform) actor
stream = tr.streams["imagination"]
all_r, all_ret = [], []
with torch.no_grad():
    for _ in range(6):
        batch = tr.replay.sample_batch(cfg.imagination_batch, cfg.imagination_context, stream, tr.dtype)
        cond = condition(wm, batch.obs, batch.actions, stream, cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
        traj = imagine(wm, tr.actor, cond, cfg.imagination_horizon, stream,
                       cfg.draft_rounds, cfg.revise_rounds, cfg.repetitions)
        values = tr.critic.value(traj.feats)
        ret = lambda_returns(traj.rewards, traj.continues, values, cfg.discount, cfg.return_lambda)
        all_r.append(traj.rewards.flatten())
        all_ret.append(ret.flatten())
r = torch.cat(all_r); ret = torch.cat(all_ret)
print("imagined rewards: mean %.4f max %.4f frac>0.25 %.4f" % (r.mean(), r.max(), (r > 0.25).float().mean()))
p5, p95 = torch.quantile(ret, torch.tensor([0.05, 0.95], dtype=ret.dtype))
print("imagined lambda-returns: mean %.4f p5 %.4f p95 %.4f range %.4f" % (ret.mean(), p5, p95, p95 - p5))

# encoder posterior entropy and recon quality vs mean-frame baseline
with torch.no_grad():
    batch = tr.replay.sample_batch(8, 16, tr.streams["replay"], tr.dtype)
    flat_obs = batch.obs.flatten(0, 1)
    latent = wm.encode(flat_obs, None, sample_mode="mode")
    ent = -(latent.probs * latent.probs.clamp(min=1e-12).log()).sum(-1)
    print("posterior entropy: mean %.3f (max ln32=%.3f) min %.3f" % (ent.mean(), np.log(32), ent.min()))
    recon = wm.decode(latent.flat)
    mse = ((recon - flat_obs) ** 2).mean()
    mean_frame = flat_obs.mean(0, keepdim=True)
    mse_mean = ((mean_frame - flat_obs) ** 2).mean()
    print("recon mse %.5f vs mean-frame mse %.5f" % (mse, mse_mean))
    # token usage: how many distinct codes does position 0 use across frames?
    idx = latent.indices
    print("distinct codes used (pos 0): %d / 32; overall code histogram std %.3f"
          % (len(torch.unique(idx[:, 0])), torch.bincount(idx.flatten(), minlength=32).float().std()))
