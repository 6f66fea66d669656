"""Command line entry point: ``dynrf {gen,train,render,eval,check-grad}``.

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override the
file's fields. Outputs are written under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional


log = logging.getLogger("dynrf")

EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"cannot parse config {path}: {e}") from None


def _pick(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _out_dir(args, cfg) -> Path:
    out = _pick(args, cfg, "out")
    if out is None:
        raise UsageError("--out is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dataset_path(args, cfg) -> Path:
    path = _pick(args, cfg, "dataset")
    if path is None or not Path(path).is_dir():
        raise UsageError(f"dataset directory not found: {path}")
    return Path(path)


def _parse_res(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 96x72, got {text!r}") from None


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    from . import synthgen

    cfg = _load_config(args.config)
    scene_name = _pick(args, cfg, "scene", "single_player")
    if scene_name not in synthgen.SCENES:
        raise UsageError(f"unknown scene {scene_name!r}")
    scene = synthgen.SCENES[scene_name]()
    if "scene_spec" in cfg:
        scene = synthgen.scene_from_json({**_scene_dict(scene), **cfg["scene_spec"]})
    rig_kind = _pick(args, cfg, "rig", "closeup")
    overrides = dict(cfg.get("rig_spec", {}))
    if args.cameras is not None:
        overrides["count"] = args.cameras
    rig = synthgen.rig_spec(rig_kind, **overrides)
    res = args.res or (tuple(cfg["res"]) if "res" in cfg else None)
    timesteps = _pick(args, cfg, "timesteps", 8)
    out = _out_dir(args, cfg)
    synthgen.export_dataset(scene, rig, int(timesteps), res, out)
    print(f"wrote {rig.count} training + {rig.eval_count} held-out cameras x {timesteps} timesteps to {out}")
    return 0


def _scene_dict(scene) -> dict:
    from dataclasses import asdict

    return asdict(scene)


def _train_config(args, cfg: dict):
    from .trainer import TrainConfig

    tc = dict(cfg.get("train", {}))
    for name in ("seed", "workers", "sampler", "iterations"):
        v = getattr(args, name, None)
        if v is not None:
            tc[name] = v
        elif name in cfg:
            tc[name] = cfg[name]
    if getattr(args, "field", None) is not None:
        tc["field"] = args.field
    tc.setdefault("workers", os.cpu_count() or 1)
    if cfg.get("preset") == "full_scale":
        return TrainConfig.full_scale(**tc)
    return TrainConfig.from_json(tc)


def cmd_train(args) -> int:
    from .dataset import load_dataset
    from .trainer import train

    cfg = _load_config(args.config)
    ds_path = _dataset_path(args, cfg)
    config = _train_config(args, cfg)
    out = _out_dir(args, cfg)
    ds = load_dataset(ds_path)
    with open(out / "train_config.json", "w") as f:
        json.dump(config.to_json(), f, indent=1)
    model, tlog = train(ds, config, checkpoint_dir=out)
    model.save(out / "model.dfck", extra={"train_config": config.to_json()})
    tlog.write_jsonl(out / "train_log.jsonl")
    print(f"final loss {tlog.entries[-1]['loss']:.6f}; checkpoint {out / 'model.dfck'}")
    return 0


def _load_model(args, cfg):
    from .trainer import DynamicModel, TrainConfig

    ckpt = _pick(args, cfg, "checkpoint")
    if ckpt is None or not Path(ckpt).is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model, extra = DynamicModel.load(ckpt)
    tc = TrainConfig.from_json(extra.get("train_config", {}))
    return model, tc.render_config()


def _select_cameras(ds, which):
    if which in (None, "eval"):
        return ds.eval_cameras or ds.cameras[-1:]
    if which == "train":
        return ds.train_cameras
    if which == "all":
        return ds.cameras
    ids = [int(v) for v in str(which).split(",")]
    return [ds.camera(i) for i in ids]


def orbit_cameras(template, transform, center, radius, height, frames):
    """Cameras on a horizontal circle (world units) looking at ``center``, in scene coordinates."""
    from dataclasses import replace

    from .synthgen import look_at

    cams = []
    for k in range(frames):
        a = 2 * math.pi * k / frames
        pos = (center[0] + radius * math.cos(a), height, center[2] + radius * math.sin(a))
        cam = replace(template, id=k, c2w=look_at(pos, center), eval_only=True)
        cams.append(transform.apply_camera(cam))
    return cams


def orbit_times(frames: int, time_range=(0.0, 1.0)) -> list[float]:
    """Frame times spaced linearly over ``time_range``, endpoints included."""
    t0, t1 = time_range
    if frames == 1:
        return [float(t0)]
    return [t0 + (t1 - t0) * k / (frames - 1) for k in range(frames)]


def cmd_render(args) -> int:
    from .dataset import load_dataset, write_png
    from .trainer import render_camera

    cfg = _load_config(args.config)
    model, rcfg = _load_model(args, cfg)
    ds = load_dataset(_dataset_path(args, cfg))
    out = _out_dir(args, cfg)
    orbit = cfg.get("orbit")
    if args.frames is not None:
        orbit = {**(orbit or {}), "frames": args.frames}
    if orbit is not None:
        frames = int(orbit.get("frames", 30))
        if frames < 1:
            raise UsageError("orbit needs at least one frame")
        times = orbit_times(frames, orbit.get("time_range", (0.0, 1.0)))
        cams = orbit_cameras(ds.cameras[0], ds.scene_transform, orbit.get("center", [0.0, 1.0, 0.0]),
                             orbit.get("radius", 6.0), orbit.get("height", 1.6), frames)
        for k, (cam, t) in enumerate(zip(cams, times)):
            write_png(out / f"orbit_{k:04d}.png", render_camera(model, cam, t, rcfg)["rgb"])
        print(f"wrote {frames} orbit frames to {out}")
        return 0
    for cam in _select_cameras(ds, _pick(args, cfg, "cameras")):
        for ti in range(ds.num_timesteps):
            p = out / "frames" / f"cam{cam.id:03d}" / f"t{ti:04d}.png"
            p.parent.mkdir(parents=True, exist_ok=True)
            write_png(p, render_camera(model, cam, ds.frame(cam.id, ti).time, rcfg)["rgb"])
    print(f"wrote renders to {out / 'frames'}")
    return 0


def cmd_eval(args) -> int:
    from .dataset import DatasetError, frame_path, load_dataset, read_png
    from .metrics import DEFAULT_MARGIN, EvalFrame, evaluate
    from .trainer import render_frames

    cfg = _load_config(args.config)
    ds_path = _dataset_path(args, cfg)
    ds = load_dataset(ds_path)
    out = _out_dir(args, cfg)
    margin = float(_pick(args, cfg, "margin", DEFAULT_MARGIN))
    cams = _select_cameras(ds, _pick(args, cfg, "cameras"))
    pred_dir = _pick(args, cfg, "pred")
    if pred_dir is not None:
        pred = []
        for cam in cams:
            for ti in range(ds.num_timesteps):
                p = frame_path(Path(pred_dir), "frames", cam.id, ti)
                if not p.exists():
                    raise DatasetError(f"missing file: {p}")
                pred.append(EvalFrame(cam.id, ti, read_png(p)))
    else:
        model, rcfg = _load_model(args, cfg)
        pred = render_frames(model, ds, cams, rcfg)
    has_boxes = (ds_path / "boxes.json").exists()
    if not has_boxes:
        log.warning("no boxes.json in %s: focused metrics unavailable", ds_path)
    gt = [EvalFrame(f.camera_id, f.time_index, f.image, f.boxes) for f in ds.frames_for(cams)]
    report = evaluate(pred, gt, margin, use_boxes=has_boxes)
    with open(out / "report.json", "w") as f:
        json.dump(report.to_json(), f, indent=1)
    foc = report.focused
    print(f"default PSNR {report.default['psnr']:.2f} SSIM {report.default['ssim']:.4f}"
          + (f" | focused PSNR {foc['psnr']:.2f} SSIM {foc['ssim']:.4f}" if foc else " | focused n/a"))
    return 0


def cmd_check_grad(args) -> int:
    from .gradcheck import REL_TOL, check_gradients

    cfg = _load_config(args.config)
    seed = int(_pick(args, cfg, "seed", 0))
    n_seeds = int(_pick(args, cfg, "seeds", 5))
    kinds = ["hexplane", "temporal_hash"] if args.field in (None, "both") else [args.field]
    results = []
    for kind in kinds:
        for s in range(seed, seed + n_seeds):
            r = check_gradients(s, kind, n_params=args.params, corrupt=args.corrupt)
            results.append(r)
            status = "PASS" if r.passed else "FAIL"
            print(f"{status} {kind:14s} seed {s}: {len(r.checks)} params, max rel err {r.max_rel_error:.2e}")
    ok = all(r.passed for r in results)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gradcheck.json", "w") as f:
            json.dump([{"seed": r.seed, "field": r.field, "passed": r.passed, "checks": r.checks}
                       for r in results], f, indent=1)
    print(f"{'all checks passed' if ok else 'gradient check FAILED'} (tolerance {REL_TOL:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynrf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")

    g = sub.add_parser("gen", help="render a synthetic dataset")
    common(g)
    g.add_argument("--scene", choices=["single_player", "players"])
    g.add_argument("--rig", choices=["closeup", "broadcast", "stadium"])
    g.add_argument("--timesteps", type=int)
    g.add_argument("--res", type=_parse_res)
    g.add_argument("--cameras", type=int, help="number of training cameras")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit a dynamic radiance field")
    common(t)
    t.add_argument("--dataset")
    t.add_argument("--sampler", choices=["uniform", "isg"])
    t.add_argument("--field", choices=["hexplane", "temporal_hash"])
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render held-out cameras or an orbit")
    common(r)
    r.add_argument("--dataset")
    r.add_argument("--checkpoint")
    r.add_argument("--cameras", help="eval | train | all | comma-separated ids")
    r.add_argument("--frames", type=int, help="render an orbit with this many frames")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="default and focused metrics on held-out cameras")
    common(e)
    e.add_argument("--dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--pred", help="directory of predicted frames (frames/camCCC/tFFFF.png)")
    e.add_argument("--cameras")
    e.add_argument("--margin", type=float)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check-grad", help="finite-difference gradient verification")
    common(c)
    c.add_argument("--field", choices=["hexplane", "temporal_hash", "both"])
    c.add_argument("--seeds", type=int)
    c.add_argument("--params", type=int, default=20)
    c.add_argument("--corrupt", type=float, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check_grad)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO if os.environ.get("DYNRF_VERBOSE") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    import torch

    torch.set_num_threads(max(1, getattr(args, "workers", None) or os.cpu_count() or 1))
    try:
        return args.func(args)
    except UsageError as e:
        print(f"dynrf {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # surfaced as a one-line message with nonzero exit
        print(f"dynrf {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
