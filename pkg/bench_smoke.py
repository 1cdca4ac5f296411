"""Scratch timing for the smoke-config sizing. Not part of the package."""
import time

import torch

from maskwm.config import Config
from maskwm.numerics import RngStream
from maskwm.train import Trainer


def build(**over):
    base = dict(
        env="gridworld", seed=0, precision="float32",
        transformer_layers=2, embed_dim=128, transformer_heads=4, dropout=0.1,
        max_context=16, encoder_channels=[16, 32, 64, 128],
        maskgit_layers=2, maskgit_dim=128, maskgit_heads=4,
        batch_size=8, batch_length=16,
        imagination_batch=256, imagination_context=4, imagination_horizon=10,
        env_context=8, buffer_capacity=50_000, learning_starts=400,
        update_world_model_every=4, update_agent_every=4,
        eval_every=100_000, eval_episodes=4, checkpoint_every=0,
    )
    base.update(over)
    return Config(**base).validate()


def time_updates(tag, **over):
    import shutil
    cfg = build(**over)
    tr = Trainer(cfg, f"/tmp/bench_{tag}")
    tr.run(cfg.learning_starts)
    t0 = time.time()
    for _ in range(5):
        tr.train_world_model()
    t1 = time.time()
    for _ in range(5):
        tr.train_agent()
    t2 = time.time()
    print(f"{tag:28s} wm {1000 * (t1 - t0) / 5:7.0f} ms   agent {1000 * (t2 - t1) / 5:7.0f} ms")
    tr.close()
    shutil.rmtree(f"/tmp/bench_{tag}", ignore_errors=True)
    return (t1 - t0) / 5, (t2 - t1) / 5


torch.set_num_threads(1)
time_updates("base")
time_updates("small-codec", encoder_channels=[8, 16, 32, 64])
time_updates("wm-batch-4x16", batch_size=4)
time_updates("imag-128x8", imagination_batch=128, imagination_horizon=8)
time_updates("1L-prior", maskgit_layers=1)
time_updates("lean", encoder_channels=[8, 16, 32, 64], batch_size=4,
             imagination_batch=128, imagination_horizon=8, maskgit_layers=1)
