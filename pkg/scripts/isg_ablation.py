"""Uniform vs ISG ray sampling on the stadium rig, equal iteration budgets.

Usage: python scripts/isg_ablation.py [--iterations N] [--seeds 0 1 2] [--timesteps T] [--data DIR]
"""
import argparse
import json
import time
from pathlib import Path

from dynrf.dataset import load_dataset
from dynrf.synthgen import export_dataset, rig_spec, single_player_scene
from dynrf.trainer import TrainConfig, evaluate_model, train


def run_arm(ds, sampler, seed, iterations, **kw):
    cfg = TrainConfig(sampler=sampler, seed=seed, iterations=iterations, **kw)
    model, _ = train(ds, cfg)
    return evaluate_model(model, ds, cfg.render_config())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--timesteps", type=int, default=4)
    ap.add_argument("--data", default="runs/stadium")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    data = Path(args.data)
    if not (data / "cameras.json").exists():
        export_dataset(single_player_scene(), rig_spec("stadium"), args.timesteps, None, data)
    ds = load_dataset(data)

    rows = []
    for seed in args.seeds:
        row = {"seed": seed}
        for sampler in ("uniform", "isg"):
            t0 = time.perf_counter()
            rep = run_arm(ds, sampler, seed, args.iterations)
            row[sampler] = {"default": rep.default, "focused": rep.focused,
                            "seconds": time.perf_counter() - t0}
        up, ip = row["uniform"]["focused"]["psnr"], row["isg"]["focused"]["psnr"]
        print(f"seed {seed}: focused PSNR uniform {up:.2f}  isg {ip:.2f}  "
              f"(default {row['uniform']['default']['psnr']:.2f} / {row['isg']['default']['psnr']:.2f})",
              flush=True)
        rows.append(row)
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
