"""Scratch calibration driver: chunked training with eval logging."""
import argparse
import json
import time

from maskwm.config import load_config
from maskwm.train import Trainer

parser = argparse.ArgumentParser()
parser.add_argument("--config", required=True)
parser.add_argument("--out", required=True)
parser.add_argument("--seed", type=int, default=None)
parser.add_argument("--max-steps", type=int, default=50_000)
parser.add_argument("--chunk", type=int, default=2500)
parser.add_argument("--target", type=float, required=True)
parser.add_argument("--budget", type=float, default=1800.0, help="seconds")
parser.add_argument("--set", action="append", default=[])
args = parser.parse_args()

sets = list(args.set)
if args.seed is not None:
    sets.append(f"seed={args.seed}")
cfg = load_config(args.config, env={}, sets=sets)
tr = Trainer(cfg, args.out)
t0 = time.time()
log = open(f"{args.out}/calib.log", "w")
hit = None
while tr.env_steps < args.max_steps and time.time() - t0 < args.budget:
    tr.run(min(args.chunk, args.max_steps - tr.env_steps))
    ret = tr.evaluate()
    line = json.dumps({"step": tr.env_steps, "eval_return": round(ret, 4),
                       "elapsed": round(time.time() - t0, 1)})
    print(line, flush=True)
    log.write(line + "\n")
    log.flush()
    if ret >= args.target:
        hit = tr.env_steps
        break
log.write(json.dumps({"hit": hit, "elapsed": round(time.time() - t0, 1)}) + "\n")
log.close()
tr.close()
print("HIT" if hit else "MISS", hit, f"{time.time() - t0:.0f}s")
