"""Calibrated multi-camera dynamic datasets: loading, validation, normalization and rays.

Camera convention: the camera looks along -Z, +Y is up and +X is right in the
camera frame. ``c2w`` maps camera coordinates to world coordinates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

NEAR = 0.05
FAR = 100.0


class DatasetError(Exception):
    """A dataset file is missing or cannot be parsed."""


class ValidationError(DatasetError):
    """Dataset contents violate an invariant."""


@dataclass(frozen=True)
class BBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise ValidationError(f"box {self} outside {width}x{height} image")


@dataclass
class CameraModel:
    id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w: np.ndarray
    eval_only: bool = False

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64).reshape(4, 4)

    @property
    def center(self) -> np.ndarray:
        return self.c2w[:3, 3].copy()

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"camera {self.id}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(f"camera {self.id}: principal point outside image")
        rot = self.c2w[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1) > 1e-6:
            raise ValidationError(f"camera {self.id}: c2w rotation is not orthonormal")
        if not np.allclose(self.c2w[3], [0, 0, 0, 1]):
            raise ValidationError(f"camera {self.id}: c2w last row must be (0, 0, 0, 1)")


@dataclass
class Frame:
    camera_id: int
    time_index: int
    time: float
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: Optional[np.ndarray] = None  # (H, W) scene units, inf on miss
    boxes: Optional[list[BBox]] = None


@dataclass(frozen=True)
class SceneTransform:
    """x_scene = scale * (x_world + translation)"""

    scale: float = 1.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(pts, dtype=np.float64) + np.asarray(self.translation))

    def apply_camera(self, cam: CameraModel) -> CameraModel:
        c2w = cam.c2w.copy()
        c2w[:3, 3] = self.apply_points(c2w[:3, 3])
        return replace(cam, c2w=c2w)

    def invert_camera(self, cam: CameraModel) -> CameraModel:
        c2w = cam.c2w.copy()
        c2w[:3, 3] = c2w[:3, 3] / self.scale - np.asarray(self.translation)
        return replace(cam, c2w=c2w)

    def compose(self, inner: "SceneTransform") -> "SceneTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        t = np.asarray(inner.translation) + np.asarray(self.translation) / inner.scale
        return SceneTransform(self.scale * inner.scale, tuple(float(v) for v in t))


@dataclass
class DynamicDataset:
    cameras: list[CameraModel]
    frames: list[Frame]
    num_timesteps: int
    scene_transform: SceneTransform = field(default_factory=SceneTransform)

    def camera(self, camera_id: int) -> CameraModel:
        for cam in self.cameras:
            if cam.id == camera_id:
                return cam
        raise KeyError(camera_id)

    def frame(self, camera_id: int, time_index: int) -> Frame:
        for fr in self.frames:
            if fr.camera_id == camera_id and fr.time_index == time_index:
                return fr
        raise KeyError((camera_id, time_index))

    @property
    def train_cameras(self) -> list[CameraModel]:
        return [c for c in self.cameras if not c.eval_only]

    @property
    def eval_cameras(self) -> list[CameraModel]:
        return [c for c in self.cameras if c.eval_only]

    def frames_for(self, cameras: list[CameraModel]) -> list[Frame]:
        ids = {c.id for c in cameras}
        return sorted(
            (f for f in self.frames if f.camera_id in ids),
            key=lambda f: (f.camera_id, f.time_index),
        )

    def validate(self) -> None:
        cams = {}
        for cam in self.cameras:
            cam.validate()
            if cam.id in cams:
                raise ValidationError(f"duplicate camera id {cam.id}")
            cams[cam.id] = cam
        seen = set()
        for fr in self.frames:
            key = (fr.camera_id, fr.time_index)
            if key in seen:
                raise ValidationError(f"duplicate frame {key}")
            seen.add(key)
            cam = cams.get(fr.camera_id)
            if cam is None:
                raise ValidationError(f"frame references unknown camera {fr.camera_id}")
            if not 0 <= fr.time_index < self.num_timesteps:
                raise ValidationError(f"frame {key}: time index out of range")
            if fr.image.shape != (cam.height, cam.width, 3):
                raise ValidationError(
                    f"frame {key}: image is {fr.image.shape[1]}x{fr.image.shape[0]}, "
                    f"camera is {cam.width}x{cam.height}"
                )
            if fr.image.min() < 0 or fr.image.max() > 1:
                raise ValidationError(f"frame {key}: pixel values outside [0, 1]")
            if fr.depth is not None and fr.depth.shape != (cam.height, cam.width):
                raise ValidationError(f"frame {key}: depth map size mismatch")
            for box in fr.boxes or []:
                box.validate(cam.width, cam.height)


def time_of(time_index: int, num_timesteps: int) -> float:
    return time_index / (num_timesteps - 1) if num_timesteps > 1 else 0.0


# ---------------------------------------------------------------------------
# Rays


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float
    time: float
    pixel: tuple[int, float, float]


def generate_rays(
    camera: CameraModel, px: np.ndarray, py: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pinhole rays; returns (origins, unit directions) of shape (..., 3)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack(
        [(px - camera.cx) / camera.fx, -(py - camera.cy) / camera.fy, -np.ones_like(px)], axis=-1
    )
    d = d_cam @ camera.c2w[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.c2w[:3, 3], d.shape).copy()
    return o, d


def generate_ray(camera: CameraModel, px: float, py: float, time: float,
                 near: float = NEAR, far: float = FAR) -> Ray:
    if not (0 <= px <= camera.width and 0 <= py <= camera.height):
        raise ValueError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image")
    o, d = generate_rays(camera, np.array(px), np.array(py))
    return Ray(o, d, near, far, float(time), (camera.id, px, py))


def pixel_grid(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates, each of shape (H, W)."""
    return np.meshgrid(np.arange(camera.width) + 0.5, np.arange(camera.height) + 0.5)


def normalize_scene(cameras: list[CameraModel]) -> SceneTransform:
    """Similarity putting the camera centroid at the origin and the farthest camera at radius 1."""
    if not cameras:
        raise ValueError("normalize_scene needs at least one camera")
    centers = np.stack([c.center for c in cameras])
    centroid = centers.mean(axis=0)
    radius = np.linalg.norm(centers - centroid, axis=1).max()
    scale = 1.0 / radius if radius > 1e-12 else 1.0
    return SceneTransform(float(scale), tuple(float(v) for v in -centroid))


# ---------------------------------------------------------------------------
# File formats


def read_pfm(path: os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise DatasetError(f"{path}: not a PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path: os.PathLike, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(b"Pf\n" if data.ndim == 2 else b"PF\n")
        f.write(f"{w} {h}\n-1.0\n".encode())
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def read_png(path: os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_png(path: os.PathLike, image: np.ndarray) -> None:
    q = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    # explicit params keep the byte stream stable across runs
    Image.fromarray(q, "RGB").save(path, format="PNG", optimize=False, compress_level=6)


def quantize(image: np.ndarray) -> np.ndarray:
    """The 8-bit round trip applied by ``write_png``/``read_png``."""
    return (np.clip(np.round(np.asarray(image) * 255.0), 0, 255) / 255.0).astype(np.float32)


def frame_path(root: Path, kind: str, camera_id: int, time_index: int) -> Path:
    ext = "png" if kind == "frames" else "pfm"
    return root / kind / f"cam{camera_id:03d}" / f"t{time_index:04d}.{ext}"


def _read_json(path: Path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise DatasetError(f"missing file: {path}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DatasetError(f"cannot parse {path}: {e}") from e


def _camera_from_json(entry: dict) -> CameraModel:
    return CameraModel(
        id=int(entry["id"]),
        width=int(entry["width"]),
        height=int(entry["height"]),
        fx=float(entry["fx"]),
        fy=float(entry["fy"]),
        cx=float(entry["cx"]),
        cy=float(entry["cy"]),
        c2w=np.array(entry["c2w"], dtype=np.float64),
        eval_only=bool(entry.get("eval", False)),
    )


def load_dataset(path: os.PathLike, normalize: bool = True) -> DynamicDataset:
    """Load a dataset directory; cameras (and depth) are rescaled so all centers fit the unit ball."""
    root = Path(path)
    meta = _read_json(root / "cameras.json")
    try:
        num_t = int(meta["num_timesteps"])
        world_cams = [_camera_from_json(e) for e in meta["cameras"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"cannot parse {root / 'cameras.json'}: {e}") from e
    for cam in world_cams:
        cam.validate()

    boxes: dict[tuple[int, int], list[BBox]] = {}
    has_boxes = (root / "boxes.json").exists()
    if has_boxes:
        for b in _read_json(root / "boxes.json").get("boxes", []):
            key = (int(b["camera_id"]), int(b["time_index"]))
            boxes.setdefault(key, []).append(BBox(int(b["x0"]), int(b["y0"]), int(b["x1"]), int(b["y1"])))

    transform = normalize_scene(world_cams) if normalize else SceneTransform()
    frames = []
    for cam in world_cams:
        for ti in range(num_t):
            img_path = frame_path(root, "frames", cam.id, ti)
            if not img_path.exists():
                raise DatasetError(f"missing file: {img_path}")
            try:
                image = read_png(img_path)
            except OSError as e:
                raise DatasetError(f"cannot decode {img_path}: {e}") from e
            depth_path = frame_path(root, "depth", cam.id, ti)
            depth = read_pfm(depth_path) * np.float32(transform.scale) if depth_path.exists() else None
            frames.append(Frame(
                camera_id=cam.id,
                time_index=ti,
                time=time_of(ti, num_t),
                image=image,
                depth=depth,
                boxes=boxes.get((cam.id, ti), []) if has_boxes else None,
            ))
    ds = DynamicDataset(
        cameras=[transform.apply_camera(c) for c in world_cams],
        frames=frames,
        num_timesteps=num_t,
        scene_transform=transform,
    )
    ds.validate()
    return ds


def save_dataset(ds: DynamicDataset, path: os.PathLike) -> None:
    """Write ``ds`` in the directory layout read by ``load_dataset`` (world units)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    world = [ds.scene_transform.invert_camera(c) for c in ds.cameras]
    cams_json = []
    for cam in world:
        entry = {
            "id": cam.id, "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "c2w": [float(v) for v in cam.c2w.reshape(-1)],
        }
        if cam.eval_only:
            entry["eval"] = True
        cams_json.append(entry)
    with open(root / "cameras.json", "w") as f:
        json.dump({"num_timesteps": ds.num_timesteps, "cameras": cams_json}, f, indent=1)

    boxes_json = []
    any_boxes = False
    for fr in sorted(ds.frames, key=lambda f: (f.camera_id, f.time_index)):
        p = frame_path(root, "frames", fr.camera_id, fr.time_index)
        p.parent.mkdir(parents=True, exist_ok=True)
        write_png(p, fr.image)
        if fr.depth is not None:
            d = frame_path(root, "depth", fr.camera_id, fr.time_index)
            d.parent.mkdir(parents=True, exist_ok=True)
            write_pfm(d, fr.depth / ds.scene_transform.scale)
        if fr.boxes is not None:
            any_boxes = True
            for b in fr.boxes:
                boxes_json.append({"camera_id": fr.camera_id, "time_index": fr.time_index,
                                   "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1})
    if any_boxes:
        with open(root / "boxes.json", "w") as f:
            json.dump({"boxes": boxes_json}, f, indent=1)


def datasets_equal(a: DynamicDataset, b: DynamicDataset, atol: float = 1e-9) -> bool:
    if a.num_timesteps != b.num_timesteps or len(a.cameras) != len(b.cameras):
        return False
    if abs(a.scene_transform.scale - b.scene_transform.scale) > atol:
        return False
    if not np.allclose(a.scene_transform.translation, b.scene_transform.translation, atol=atol):
        return False
    for ca, cb in zip(a.cameras, b.cameras):
        if (ca.id, ca.width, ca.height, ca.eval_only) != (cb.id, cb.width, cb.height, cb.eval_only):
            return False
        if not np.allclose([ca.fx, ca.fy, ca.cx, ca.cy], [cb.fx, cb.fy, cb.cx, cb.cy], atol=atol, rtol=0):
            return False
        if not np.allclose(ca.c2w, cb.c2w, atol=atol, rtol=0):
            return False
    fa = sorted(a.frames, key=lambda f: (f.camera_id, f.time_index))
    fb = sorted(b.frames, key=lambda f: (f.camera_id, f.time_index))
    if len(fa) != len(fb):
        return False
    for x, y in zip(fa, fb):
        if (x.camera_id, x.time_index) != (y.camera_id, y.time_index) or x.time != y.time:
            return False
        if not np.array_equal(x.image, y.image):
            return False
        if (x.depth is None) != (y.depth is None):
            return False
        if x.depth is not None and not np.allclose(x.depth, y.depth, rtol=1e-6, equal_nan=True):
            return False
        if (x.boxes or []) != (y.boxes or []):
            return False
    return True
