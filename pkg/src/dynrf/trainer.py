"""Optimization of a (field, proposal field) pair from posed multi-camera frames."""

from __future__ import annotations

import json
import logging
import os
import time
import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from . import field as fieldlib
from .dataset import CameraModel, DynamicDataset, generate_rays, pixel_grid
from .field import HexplaneConfig, HexplaneField, TemporalHashConfig
from .metrics import DEFAULT_MARGIN, EvalFrame, MetricReport, evaluate
from .renderer import RenderConfig, render_image, render_rays
from .sampler import ISG_FLOOR, ISG_GAMMA, build_table, sample_pixels

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_rays: int = 1024
    lr: float = 1e-2
    lr_final: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    tv_weight: float = 1e-4
    ts_weight: float = 1e-4
    # "uniform" | "isg"; isg weights every batch, it does not alternate with uniform batches
    sampler: str = "uniform"
    isg_gamma: float = ISG_GAMMA
    isg_floor: float = ISG_FLOOR
    field: str = "hexplane"  # "hexplane" | "temporal_hash"
    field_config: dict = dataclasses.field(default_factory=dict)
    proposal_config: dict = dataclasses.field(default_factory=lambda: dict(
        base_resolution=16, num_scales=2, feature_dim=4, hidden=32, layers=1))
    n_coarse: int = 48
    n_fine: int = 48
    background: tuple[float, float, float] = (0.55, 0.7, 0.9)
    seed: int = 0
    workers: int = 1
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0 or self.lr_final <= 0:
            raise ValueError("learning rates must be positive")
        if self.tv_weight < 0 or self.ts_weight < 0:
            raise ValueError("regularizer weights must be non-negative")
        if self.sampler not in ("uniform", "isg"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.field not in fieldlib.FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.field!r}")
        self.background = tuple(self.background)

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        """Iteration count and learning rate used for the full-resolution scenes."""
        return cls(**{"iterations": 30000, "lr": 1e-2, **kw})

    @classmethod
    def from_json(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        return asdict(self)

    def render_config(self) -> RenderConfig:
        return RenderConfig(n_coarse=self.n_coarse, n_fine=self.n_fine, background=self.background)


class DynamicModel(nn.Module):
    """Main radiance field plus the low-resolution proposal field that places fine samples."""

    def __init__(self, field: nn.Module, proposal: nn.Module):
        super().__init__()
        self.field = field
        self.proposal = proposal

    @classmethod
    def build(cls, config: TrainConfig, num_timesteps: int, generator: torch.Generator) -> "DynamicModel":
        if config.field == "hexplane":
            fcfg = HexplaneConfig(**{"time_resolution": num_timesteps, **config.field_config})
        else:
            fcfg = TemporalHashConfig.for_timesteps(num_timesteps, **config.field_config)
        main = fieldlib.build_field(config.field, fcfg, generator)
        pcfg = HexplaneConfig(**{"time_resolution": num_timesteps, **config.proposal_config})
        return cls(main, HexplaneField(pcfg, generator))

    def save(self, path: os.PathLike, extra: Optional[dict] = None) -> None:
        fieldlib.save_checkpoint(path, {"field": self.field, "proposal": self.proposal}, extra)

    @classmethod
    def load(cls, path: os.PathLike) -> tuple["DynamicModel", dict]:
        fields_, extra = fieldlib.load_checkpoint(path)
        return cls(fields_["field"], fields_["proposal"]), extra


# ---------------------------------------------------------------------------
# Losses


def photometric_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    if pred.numel() == 0:
        raise ValueError("empty batch")
    return torch.mean((pred - gt) ** 2)


def plane_regularizers(field: HexplaneField) -> tuple[torch.Tensor, torch.Tensor]:
    """(tv, ts): spatial-plane smoothness and time-plane second-difference smoothness.

    tv averages, over spatial planes, the mean squared difference between
    adjacent vertices along both plane axes. ts averages, over time planes, the
    mean squared second difference along the time axis (zero with < 3 steps).
    """
    tvs = []
    for p in field.spatial_planes():
        du = (p[:, :, 1:] - p[:, :, :-1]) ** 2
        dv = (p[:, 1:, :] - p[:, :-1, :]) ** 2
        tvs.append((du.sum() + dv.sum()) / (du.numel() + dv.numel()))
    tss = []
    for p in field.time_planes():
        if p.shape[1] < 3:
            tss.append(p.sum() * 0)
            continue
        d2 = p[:, 2:, :] - 2 * p[:, 1:-1, :] + p[:, :-2, :]
        tss.append((d2**2).mean())
    zero = torch.zeros((), dtype=next(field.parameters()).dtype)
    tv = torch.stack(tvs).mean() if tvs else zero
    ts = torch.stack(tss).mean() if tss else zero
    return tv, ts


def regularization(model: DynamicModel, config: TrainConfig) -> tuple[torch.Tensor, torch.Tensor]:
    tv = ts = torch.zeros((), dtype=next(model.parameters()).dtype)
    for f in (model.field, model.proposal):
        if isinstance(f, HexplaneField):
            a, b = plane_regularizers(f)
            tv, ts = tv + a, ts + b
    return tv, ts


def total_loss(model: DynamicModel, config: TrainConfig, origins, dirs, times, target,
               generator: Optional[torch.Generator] = None, fine_positions=None):
    """Fine + coarse photometric loss plus weighted regularizers -> (loss, parts, fine output)."""
    fine, coarse = render_rays(model.field, model.proposal, origins, dirs, times,
                               config.render_config(), generator, fine_positions)
    l_fine = photometric_loss(fine.rgb, target)
    l_coarse = photometric_loss(coarse.rgb, target)
    tv, ts = regularization(model, config)
    loss = l_fine + l_coarse + config.tv_weight * tv + config.ts_weight * ts
    parts = {"loss": l_fine, "coarse_loss": l_coarse, "tv": tv, "ts": ts}
    return loss, parts, fine


def backprop(model: DynamicModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every named parameter (zeros where unused)."""
    named = list(model.named_parameters())
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(named, grads)}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


@torch.no_grad()
def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15) -> AdamState:
    """Bias-corrected Adam, updating ``params`` in place."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + eps))
    return state


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainLog:
    entries: list[dict] = field(default_factory=list)

    def append(self, entry: dict) -> None:
        if self.entries and entry["iteration"] <= self.entries[-1]["iteration"]:
            raise ValueError("log iterations must increase")
        self.entries.append(entry)

    def write_jsonl(self, path: os.PathLike) -> None:
        with open(path, "w") as f:
            for e in self.entries:
                f.write(json.dumps(e) + "\n")

    def losses(self) -> np.ndarray:
        return np.array([e["loss"] for e in self.entries])


class RayTable:
    """Per-camera ray grids and stacked training images, as float32 tensors."""

    def __init__(self, dataset: DynamicDataset, table_keys: list[tuple[int, int]]):
        cams = {c.id: c for c in dataset.cameras}
        cam_ids = sorted({k[0] for k in table_keys})
        self.cam_index = {cid: i for i, cid in enumerate(cam_ids)}
        dirs, origins = [], []
        for cid in cam_ids:
            cam = cams[cid]
            px, py = pixel_grid(cam)
            o, d = generate_rays(cam, px, py)
            dirs.append(d)
            origins.append(cam.center)
        self.dirs = torch.from_numpy(np.stack(dirs)).float()
        self.origins = torch.from_numpy(np.stack(origins)).float()
        frames = {(f.camera_id, f.time_index): f for f in dataset.frames}
        self.images = torch.from_numpy(np.stack([frames[k].image for k in table_keys])).float()
        self.frame_cam = torch.tensor([self.cam_index[k[0]] for k in table_keys])
        self.frame_time = torch.tensor([frames[k].time for k in table_keys], dtype=torch.float32)

    def batch(self, frame: np.ndarray, px: np.ndarray, py: np.ndarray):
        frame = torch.from_numpy(frame)
        px = torch.from_numpy(px)
        py = torch.from_numpy(py)
        cam = self.frame_cam[frame]
        return (self.origins[cam], self.dirs[cam, py, px], self.frame_time[frame],
                self.images[frame, py, px])


def lr_at(config: TrainConfig, it: int) -> float:
    if config.iterations == 1:
        return config.lr
    return config.lr * (config.lr_final / config.lr) ** (it / (config.iterations - 1))


def train(dataset: DynamicDataset, config: TrainConfig,
          callback: Optional[Callable[[int, DynamicModel], None]] = None,
          checkpoint_dir: Optional[os.PathLike] = None) -> tuple[DynamicModel, TrainLog]:
    """Run the sample -> render -> loss -> backprop -> Adam loop; deterministic for a fixed seed."""
    torch.set_num_threads(max(1, config.workers))
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = DynamicModel.build(config, dataset.num_timesteps, gen)
    table = build_table(dataset, config.sampler, config.isg_gamma, config.isg_floor)
    rays = RayTable(dataset, table.keys)
    params = dict(model.named_parameters())
    state = AdamState()
    tlog = TrainLog()
    t_start = time.perf_counter()
    for it in range(config.iterations):
        frame, px, py = sample_pixels(table, config.batch_rays, rng)
        o, d, t, target = rays.batch(frame, px, py)
        loss, parts, _ = total_loss(model, config, o, d, t, target, gen)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        grads = backprop(model, loss)
        adam_step(params, grads, state, lr_at(config, it), config.beta1, config.beta2, config.eps)
        if it % config.log_every == 0 or it == config.iterations - 1:
            entry = {"iteration": it, **{k: float(v.detach()) for k, v in parts.items()},
                     "lr": lr_at(config, it), "wall_clock": time.perf_counter() - t_start}
            tlog.append(entry)
            log.info("it %d loss %.5f", it, entry["loss"])
        if checkpoint_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            model.save(Path(checkpoint_dir) / f"iter{it + 1:06d}.dfck")
        if callback is not None:
            callback(it, model)
    return model, tlog


# ---------------------------------------------------------------------------
# Rendering and evaluation


def render_camera(model: DynamicModel, camera: CameraModel, time_: float,
                  config: RenderConfig, dtype=torch.float32) -> dict[str, np.ndarray]:
    px, py = pixel_grid(camera)
    o, d = generate_rays(camera, px.ravel(), py.ravel())
    out = render_image(model.field, model.proposal, torch.from_numpy(o).to(dtype),
                       torch.from_numpy(d).to(dtype), time_, config)
    h, w = camera.height, camera.width
    return {
        "rgb": out["rgb"].clamp(0, 1).reshape(h, w, 3).numpy(),
        "depth": out["depth"].reshape(h, w).numpy(),
        "acc": out["acc"].reshape(h, w).numpy(),
    }


def render_frames(model: DynamicModel, dataset: DynamicDataset, cameras: list[CameraModel],
                  config: RenderConfig) -> list[EvalFrame]:
    out = []
    for cam in cameras:
        for ti in range(dataset.num_timesteps):
            fr = dataset.frame(cam.id, ti)
            out.append(EvalFrame(cam.id, ti, render_camera(model, cam, fr.time, config)["rgb"]))
    return out


def evaluate_model(model: DynamicModel, dataset: DynamicDataset, config: RenderConfig,
                   cameras: Optional[list[CameraModel]] = None,
                   margin: float = DEFAULT_MARGIN) -> MetricReport:
    """Metrics of rendered views against ground truth (held-out cameras by default)."""
    cameras = cameras if cameras is not None else (dataset.eval_cameras or dataset.cameras[-1:])
    pred = render_frames(model, dataset, cameras, config)
    gt = [EvalFrame(f.camera_id, f.time_index, f.image, f.boxes) for f in dataset.frames_for(cameras)]
    return evaluate(pred, gt, margin)
