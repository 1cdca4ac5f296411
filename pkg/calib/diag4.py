"""Probe: raw prior KL at full mask (imagination fidelity), reward fit speed
at wm_lr 1e-3, and agent-update cost with repetitions=1."""
import time
import numpy as np
import torch

from maskwm.config import load_config
from maskwm.train import Trainer
from maskwm.imagine import condition, imagine

torch.manual_seed(0)
cfg = load_config("configs/smoke_gridworld.json", env={},
                  sets=["learning_starts=1000000", "seed=0", "wm_lr=0.001"])
tr = Trainer(cfg, "calib/diag_out4")
tr.run(6000)
wm = tr.wm

def probe(tag):
    wm.eval()
    preds_pos, trues, ents, recons, rawkl = [], [], [], [], []
    with torch.no_grad():
        for _ in range(40):
            batch = tr.replay.sample_batch(8, 16, tr.streams["replay"], tr.dtype)
            flat_obs = batch.obs.flatten(0, 1)
            latent = wm.encode(flat_obs, None, sample_mode="mode")
            ents.append(float(-(latent.probs * latent.probs.clamp(min=1e-12).log()).sum(-1).mean()))
            recons.append(float(((wm.decode(latent.flat) - flat_obs) ** 2).mean()))
            sample = latent.sample.reshape(8, 16, *latent.sample.shape[1:])
            probs = latent.probs.reshape(8, 16, *latent.probs.shape[1:])
            tokens = wm.mix(sample, batch.actions)
            hidden = wm.backbone.forward_sequence(tokens)
            pred = wm.predict_reward(hidden)
            pos = batch.rewards > 0.25
            preds_pos += pred[pos].tolist()
            trues += batch.rewards[pos].tolist()
            # prior KL with everything masked: the draft-step fidelity
            h = hidden[:, :-1].reshape(-1, hidden.shape[-1])
            tgt_sample = sample[:, 1:].reshape(-1, *sample.shape[2:])
            tgt_probs = probs[:, 1:].reshape(-1, *probs.shape[2:])
            mask = torch.zeros(h.shape[0], 32, dtype=torch.bool)
            logits = wm.prior(h, tgt_sample, mask, stream=None)
            logp = torch.log_softmax(logits, -1)
            kl = (tgt_probs * (tgt_probs.clamp(min=1e-12).log() - logp)).sum(-1)
            rawkl.append(float(kl.mean()))
    print("[%s] rewpred on %d frames: mean %.3f std %.3f | ent %.2f recon %.5f | full-mask prior KL %.3f nats/token"
          % (tag, len(trues), np.mean(preds_pos), np.std(preds_pos), np.mean(ents), np.mean(recons), np.mean(rawkl)), flush=True)

t0 = time.time()
for i in range(3000):
    row = tr.train_world_model()
    if (i + 1) % 1000 == 0:
        print("upd %d (%.0fs) %s" % (i + 1, time.time() - t0, {k: round(v, 4) for k, v in row.items()}), flush=True)
        probe("after %d" % (i + 1))

# agent update cost with repetitions=1 vs 0
stream = tr.streams["imagination"]
for reps in (0, 1):
    t0 = time.time()
    for _ in range(5):
        batch = tr.replay.sample_batch(cfg.imagination_batch, cfg.imagination_context, stream, tr.dtype)
        c = condition(wm, batch.obs, batch.actions, stream, cfg.draft_rounds, cfg.revise_rounds, reps)
        traj = imagine(wm, tr.actor, c, cfg.imagination_horizon, stream, cfg.draft_rounds, cfg.revise_rounds, reps)
    print("imagine-only cost repetitions=%d: %.0f ms" % (reps, (time.time() - t0) / 5 * 1000), flush=True)
