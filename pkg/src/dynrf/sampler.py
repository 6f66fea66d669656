"""Training pixel selection: uniform, or importance-weighted by residuals to temporal medians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DynamicDataset, Frame

ISG_GAMMA = 0.05
ISG_FLOOR = 1e-3


def compute_median_images(dataset: DynamicDataset, cameras=None) -> dict[int, np.ndarray]:
    """Per-camera, per-pixel, per-channel temporal median (lower median for even counts)."""
    medians = {}
    for cam in cameras if cameras is not None else dataset.cameras:
        stack = np.stack([f.image for f in dataset.frames if f.camera_id == cam.id])
        if len(stack) == 0:
            raise ValueError(f"camera {cam.id} has no frames")
        k = (len(stack) - 1) // 2
        medians[cam.id] = np.partition(stack, k, axis=0)[k]
    return medians


def isg_weights(frame: np.ndarray, median: np.ndarray, gamma: float = ISG_GAMMA,
                floor: float = ISG_FLOOR) -> np.ndarray:
    """Per-pixel weight mean_c r^2 / (r^2 + gamma^2), floored; r = frame - median."""
    if frame.shape != median.shape:
        raise ValueError(f"frame {frame.shape} and median {median.shape} differ in shape")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    r2 = np.square(np.asarray(frame, dtype=np.float64) - np.asarray(median, dtype=np.float64))
    w = (r2 / (r2 + gamma * gamma)).mean(axis=-1)
    return np.maximum(w, floor)


@dataclass
class PixelWeightTable:
    """Per-frame pixel weights with a flat cumulative table for O(log N) draws.

    All frames must share one resolution.
    """

    keys: list[tuple[int, int]]  # (camera_id, time_index) per frame
    weights: np.ndarray  # (n_frames, H, W)
    cdf: np.ndarray  # (n_frames * H * W,), frame k's CDF shifted by k

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape[1:]

    @classmethod
    def from_weights(cls, keys, weights: np.ndarray) -> "PixelWeightTable":
        weights = np.asarray(weights, dtype=np.float64)
        if not np.all(np.isfinite(weights)) or weights.min() <= 0:
            raise ValueError("pixel weights must be finite and positive")
        flat = weights.reshape(len(keys), -1)
        cdf = np.cumsum(flat, axis=1)
        cdf /= cdf[:, -1:]
        cdf[:, -1] = 1.0
        cdf += np.arange(len(keys))[:, None]
        return cls(list(keys), weights, cdf.reshape(-1))

    def probabilities(self, frame_index: int) -> np.ndarray:
        w = self.weights[frame_index]
        return w / w.sum()


def _training_frames(dataset: DynamicDataset) -> list[Frame]:
    frames = dataset.frames_for(dataset.train_cameras)
    sizes = {f.image.shape for f in frames}
    if len(sizes) != 1:
        raise ValueError(f"training frames must share one resolution, got {sorted(sizes)}")
    return frames


def uniform_table(dataset: DynamicDataset) -> PixelWeightTable:
    frames = _training_frames(dataset)
    h, w = frames[0].image.shape[:2]
    return PixelWeightTable.from_weights([(f.camera_id, f.time_index) for f in frames],
                                         np.ones((len(frames), h, w)))


def isg_table(dataset: DynamicDataset, gamma: float = ISG_GAMMA, floor: float = ISG_FLOOR) -> PixelWeightTable:
    frames = _training_frames(dataset)
    medians = compute_median_images(dataset, dataset.train_cameras)
    weights = np.stack([isg_weights(f.image, medians[f.camera_id], gamma, floor) for f in frames])
    return PixelWeightTable.from_weights([(f.camera_id, f.time_index) for f in frames], weights)


def build_table(dataset: DynamicDataset, kind: str, gamma: float = ISG_GAMMA,
                floor: float = ISG_FLOOR) -> PixelWeightTable:
    if kind == "uniform":
        return uniform_table(dataset)
    if kind == "isg":
        return isg_table(dataset, gamma, floor)
    raise ValueError(f"unknown sampler {kind!r}")


def sample_pixels(table: PixelWeightTable, batch_size: int, rng: np.random.Generator):
    """Draw (frame index, px, py) arrays with replacement: frame uniform, pixel by weight."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n_frames = len(table.keys)
    h, w = table.shape
    frame = rng.integers(0, n_frames, size=batch_size)
    u = rng.random(batch_size)
    flat = np.searchsorted(table.cdf, frame + u, side="right")
    # guard against landing on the next frame's block at u -> 1
    flat = np.minimum(flat, (frame + 1) * h * w - 1)
    pix = flat - frame * h * w
    return frame, pix % w, pix // w
