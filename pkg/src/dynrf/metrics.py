"""PSNR / SSIM, optionally restricted to margin-expanded boxes around dynamic content."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .dataset import BBox

PSNR_CAP = 99.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
DEFAULT_MARGIN = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def _check_mask(mask: Optional[np.ndarray], shape) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    if not mask.any():
        raise ValueError("mask is empty")
    return mask


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """PSNR in dB for images in [0, 1]; zero error reports the 99 dB cap."""
    a, b = _check_pair(a, b)
    mask = _check_mask(mask, a.shape)
    sq = np.square(a - b)
    mse = sq.mean() if mask is None else sq[mask].mean()
    return psnr_from_mse(float(mse))


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM (H, W), channel-averaged; 11x11 Gaussian window, sigma 1.5."""
    a, b = _check_pair(a, b)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError(f"image {a.shape[1]}x{a.shape[0]} smaller than the 11x11 window")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    # truncate=3.5 gives exactly a radius-5 (11-tap) kernel at sigma 1.5
    blur = lambda x: gaussian_filter(x, sigma=1.5, truncate=3.5, mode="reflect")
    maps = []
    for c in range(a.shape[-1]):
        x, y = a[..., c], b[..., c]
        mx, my = blur(x), blur(y)
        vx = blur(x * x) - mx * mx
        vy = blur(y * y) - my * my
        cov = blur(x * y) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    m = ssim_map(a, b)
    mask = _check_mask(mask, m.shape)
    return float(m.mean() if mask is None else m[mask].mean())


def build_focus_mask(boxes: Sequence[BBox], margin: float, width: int, height: int) -> np.ndarray:
    """Union of boxes scaled by ``margin`` about their centers, floor/ceil-rounded and clamped."""
    if not boxes:
        raise ValueError("no boxes to focus on")
    if margin < 1:
        raise ValueError("margin must be >= 1")
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        cx, cy = (b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2
        hw, hh = margin * (b.x1 - b.x0) / 2, margin * (b.y1 - b.y0) / 2
        x0 = max(0, math.floor(cx - hw))
        y0 = max(0, math.floor(cy - hh))
        x1 = min(width, math.ceil(cx + hw))
        y1 = min(height, math.ceil(cy + hh))
        mask[y0:y1, x0:x1] = True
    return mask


@dataclass
class FrameMetrics:
    camera_id: int
    time_index: int
    psnr: float
    ssim: float
    psnr_f: Optional[float] = None
    ssim_f: Optional[float] = None
    coverage: Optional[float] = None


@dataclass
class MetricReport:
    default: dict
    focused: Optional[dict]
    frames: list[FrameMetrics]
    margin: float
    lpips: Optional[float] = None  # reserved; no pretrained network is bundled

    def to_json(self) -> dict:
        out = asdict(self)
        out["frames"] = [asdict(f) for f in self.frames]
        return out


@dataclass
class EvalFrame:
    camera_id: int
    time_index: int
    image: np.ndarray
    boxes: Optional[list[BBox]] = None


def evaluate(pred: Sequence[EvalFrame], gt: Sequence[EvalFrame], margin: float = DEFAULT_MARGIN,
             use_boxes: bool = True) -> MetricReport:
    """Per-frame default and focused metrics plus their means.

    Frames are matched by (camera_id, time_index); boxes come from ``gt``.
    Frames without boxes only contribute to the default block (their focused
    entries stay ``None``). With no boxes anywhere the focused block is ``None``.
    """
    pk = sorted((p.camera_id, p.time_index) for p in pred)
    gk = sorted((g.camera_id, g.time_index) for g in gt)
    if pk != gk or len(set(pk)) != len(pk):
        raise ValueError("prediction and ground-truth frame lists are not aligned")
    by_key = {(p.camera_id, p.time_index): p for p in pred}
    rows = []
    for g in sorted(gt, key=lambda f: (f.camera_id, f.time_index)):
        p = by_key[(g.camera_id, g.time_index)]
        row = FrameMetrics(g.camera_id, g.time_index, psnr(p.image, g.image), ssim(p.image, g.image))
        if use_boxes and g.boxes:
            h, w = g.image.shape[:2]
            mask = build_focus_mask(g.boxes, margin, w, h)
            row.psnr_f = psnr(p.image, g.image, mask)
            row.ssim_f = ssim(p.image, g.image, mask)
            row.coverage = float(mask.mean())
        rows.append(row)
    default = {"psnr": float(np.mean([r.psnr for r in rows])), "ssim": float(np.mean([r.ssim for r in rows]))}
    focused_rows = [r for r in rows if r.psnr_f is not None]
    focused = None
    if focused_rows:
        focused = {"psnr": float(np.mean([r.psnr_f for r in focused_rows])),
                   "ssim": float(np.mean([r.ssim_f for r in focused_rows]))}
    return MetricReport(default, focused, rows, margin)
