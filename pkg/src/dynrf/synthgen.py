"""Procedural stadium scenes with moving players and balls, traced analytically.

World units are meters with +Y up and the ground at y = 0. Times passed to the
scene are normalized to [0, 1] and scaled by ``SceneSpec.duration`` seconds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import (BBox, CameraModel, DynamicDataset, Frame, SceneTransform, generate_rays,
                      pixel_grid, save_dataset, time_of)

GRAVITY = np.array([0.0, -9.8, 0.0])
RESTITUTION = 0.6
BALL_RADIUS = 0.11

MISS, GROUND, STAND, PLAYER, BALL = 0, 1, 2, 3, 4
HIT_NAMES = {MISS: "sky", GROUND: "ground", STAND: "stand", PLAYER: "player", BALL: "ball"}


@dataclass
class Actor:
    kind: str  # "player" | "ball"
    # player root path: "line" uses start + velocity * s, "circle" orbits center
    path: str = "line"
    start: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    angular_speed: float = 0.0  # rad/s
    phase: float = 0.0
    limb_frequency: float = 2.0  # Hz
    limb_amplitude: float = 0.5  # rad
    jersey: tuple[float, float, float] = (0.85, 0.1, 0.1)
    shorts: tuple[float, float, float] = (0.95, 0.95, 0.95)
    skin: tuple[float, float, float] = (0.8, 0.6, 0.45)
    # ball: lowest point of the ball at t = 0, initial velocity
    p0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    v0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ball_radius: float = BALL_RADIUS


@dataclass
class Stand:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    color: tuple[float, float, float]


def default_stands(n_per_side: int = 3) -> list[Stand]:
    """A ring of colored boxes just outside the pitch, four sides."""
    palette = [(0.55, 0.2, 0.2), (0.25, 0.3, 0.6), (0.7, 0.65, 0.3), (0.4, 0.4, 0.45),
               (0.3, 0.55, 0.6), (0.6, 0.35, 0.55)]
    stands = []
    k = 0
    for side in range(4):
        along_x = side < 2
        extent = 60.0 if along_x else 42.0
        for i in range(n_per_side):
            a0 = -extent + 2 * extent * i / n_per_side
            a1 = -extent + 2 * extent * (i + 1) / n_per_side
            h = 8.0 + 4.0 * ((i + side) % 2)
            if along_x:
                z0, z1 = (42.0, 54.0) if side == 0 else (-54.0, -42.0)
                stands.append(Stand((a0, 0.0, z0), (a1, h, z1), palette[k % len(palette)]))
            else:
                x0, x1 = (62.0, 74.0) if side == 2 else (-74.0, -62.0)
                stands.append(Stand((x0, 0.0, a0), (x1, h, a1), palette[k % len(palette)]))
            k += 1
    return stands


@dataclass
class SceneSpec:
    half_extent: tuple[float, float] = (52.5, 34.0)  # x, z
    grass: tuple[float, float, float] = (0.22, 0.52, 0.2)
    grass_dark: tuple[float, float, float] = (0.17, 0.42, 0.16)
    stripe_width: float = 5.0
    checker_size: float = 1.0
    checker_contrast: float = 0.12
    line_color: tuple[float, float, float] = (0.92, 0.92, 0.9)
    line_width: float = 0.15
    surround: tuple[float, float, float] = (0.42, 0.38, 0.36)
    stands: list[Stand] = field(default_factory=default_stands)
    light_dir: tuple[float, float, float] = (0.3, -1.0, 0.2)
    ambient: float = 0.35
    sky: tuple[float, float, float] = (0.55, 0.7, 0.9)
    duration: float = 1.0
    actors: list[Actor] = field(default_factory=list)

    def __post_init__(self):
        if self.light_dir[1] >= 0:
            raise ValueError("light must point downwards")
        if min(self.half_extent) <= 0:
            raise ValueError("field extents must be positive")

    @property
    def light(self) -> np.ndarray:
        v = np.asarray(self.light_dir, dtype=np.float64)
        return v / np.linalg.norm(v)


def single_player_scene() -> SceneSpec:
    return SceneSpec(actors=[
        Actor("player", path="line", start=(-0.4, 0.0), velocity=(0.8, 0.0), limb_frequency=1.5),
        Actor("ball", p0=(0.3, 0.0, 0.3), v0=(2.5, 3.0, 0.8)),
    ])


def players_scene(n_players: int = 10, n_balls: int = 3) -> SceneSpec:
    """Players spread over the pitch on deterministic line and circle paths."""
    actors = []
    kits = [((0.85, 0.1, 0.1), (0.95, 0.95, 0.95)), ((0.1, 0.2, 0.85), (0.1, 0.1, 0.1))]
    for i in range(n_players):
        jersey, shorts = kits[i % 2]
        gx = -36.0 + 72.0 * ((i * 7) % n_players) / max(n_players - 1, 1)
        gz = -22.0 + 44.0 * ((i * 3) % n_players) / max(n_players - 1, 1)
        ang = 2 * math.pi * i / n_players
        if i % 3 == 2:
            actors.append(Actor("player", path="circle", center=(gx, gz), radius=3.0,
                                angular_speed=1.5, phase=ang, jersey=jersey, shorts=shorts,
                                limb_frequency=2.5, limb_amplitude=0.6))
        else:
            speed = 4.0 + (i % 3)
            actors.append(Actor("player", path="line", start=(gx, gz),
                                velocity=(speed * math.cos(ang), speed * math.sin(ang)),
                                jersey=jersey, shorts=shorts, limb_frequency=2.5, limb_amplitude=0.6))
    for j in range(n_balls):
        p = actors[(3 * j) % n_players]
        sx, sz = p.start if p.path == "line" else p.center
        actors.append(Actor("ball", p0=(sx + 0.5, 0.0, sz + 0.5),
                            v0=(6.0 * math.cos(j), 5.0 + j, 6.0 * math.sin(j))))
    return SceneSpec(actors=actors)


SCENES = {"single_player": single_player_scene, "players": players_scene}


def _tuples(data: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


def scene_from_json(data: dict) -> SceneSpec:
    data = dict(data)
    stands = [Stand(**_tuples(s)) for s in data.pop("stands", [])] if "stands" in data else None
    actors = [Actor(**_tuples(a)) for a in data.pop("actors", [])] if "actors" in data else None
    data = _tuples(data)
    if stands is not None:
        data["stands"] = stands
    if actors is not None:
        data["actors"] = actors
    return SceneSpec(**data)


# ---------------------------------------------------------------------------
# Actors


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    color: tuple[float, float, float]
    textured: bool = False


@dataclass
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float
    color: tuple[float, float, float]

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        return (self.a + self.b) / 2, float(np.linalg.norm(self.b - self.a)) / 2 + self.radius


def _bounding_sphere(prim) -> tuple[np.ndarray, float]:
    if isinstance(prim, Sphere):
        return prim.center, prim.radius
    return prim.bounding_sphere()


def ball_position(actor: Actor, seconds: float) -> np.ndarray:
    """Lowest point of a bouncing ball: ballistic arcs, vertical speed scaled by restitution per bounce."""
    p = np.asarray(actor.p0, dtype=np.float64).copy()
    v = np.asarray(actor.v0, dtype=np.float64).copy()
    g = -GRAVITY[1]
    remaining = float(seconds)
    for _ in range(64):
        if p[1] <= 0 and v[1] <= 0:
            # on the ground: roll horizontally
            p[1] = 0.0
            return p + np.array([v[0], 0.0, v[2]]) * remaining
        # p_y + v_y s - g s^2 / 2 = 0, positive root
        s_hit = (v[1] + math.sqrt(v[1] ** 2 + 2 * g * max(p[1], 0.0))) / g
        if s_hit >= remaining:
            break
        p = p + v * s_hit + 0.5 * GRAVITY * s_hit**2
        p[1] = 0.0
        v = v + GRAVITY * s_hit
        v[1] = -RESTITUTION * v[1]
        if v[1] < 0.05:
            v[1] = 0.0
        remaining -= s_hit
    out = p + v * remaining + 0.5 * GRAVITY * remaining**2
    out[1] = max(out[1], 0.0)
    return out


def player_root(actor: Actor, seconds: float) -> tuple[np.ndarray, np.ndarray]:
    """Ground position and unit heading of a player."""
    if actor.path == "circle":
        a = actor.phase + actor.angular_speed * seconds
        c = np.asarray(actor.center)
        pos = c + actor.radius * np.array([math.cos(a), math.sin(a)])
        heading = np.array([-math.sin(a), math.cos(a)]) * (1 if actor.angular_speed >= 0 else -1)
    else:
        v = np.asarray(actor.velocity, dtype=np.float64)
        pos = np.asarray(actor.start) + v * seconds
        speed = np.linalg.norm(v)
        heading = v / speed if speed > 0 else np.array([1.0, 0.0])
    return np.array([pos[0], 0.0, pos[1]]), np.array([heading[0], 0.0, heading[1]])


def actor_state(actor: Actor, t: float, duration: float = 1.0) -> list:
    """Posed primitives of ``actor`` at normalized time ``t``."""
    seconds = t * duration
    if actor.kind == "ball":
        low = ball_position(actor, seconds)
        return [Sphere(low + np.array([0.0, actor.ball_radius, 0.0]), actor.ball_radius,
                       (0.95, 0.95, 0.95), textured=True)]
    if actor.kind != "player":
        raise ValueError(f"unknown actor kind {actor.kind!r}")
    root, heading = player_root(actor, seconds)
    side = np.cross(heading, [0.0, 1.0, 0.0])
    up = np.array([0.0, 1.0, 0.0])
    prims = [
        Capsule(root + 0.98 * up, root + 1.42 * up, 0.2, actor.jersey),
        Sphere(root + 1.68 * up, 0.12, actor.skin),
    ]
    swing = actor.limb_amplitude * math.sin(2 * math.pi * actor.limb_frequency * seconds)
    for sgn in (1.0, -1.0):
        hip = root + 0.9 * up + 0.1 * sgn * side
        theta = sgn * swing
        foot = hip + 0.76 * (math.sin(theta) * heading - math.cos(theta) * up)
        prims.append(Capsule(hip, foot, 0.08, actor.shorts))
    return prims


# ---------------------------------------------------------------------------
# Intersections (vectorized over rays; inf = no hit)


def _hit_plane_y0(o, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -o[:, 1] / d[:, 1]
    return np.where((d[:, 1] < 0) & (o[:, 1] > 0), t, np.inf)


def _hit_sphere(o, d, c, r):
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - r * r
    disc = b * b - cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0, t1 = -b - sq, -b + sq
    t = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
    return np.where(disc >= 0, t, np.inf)


def _hit_capsule(o, d, a, b, r):
    ab = b - a
    length2 = float(ab @ ab)
    ao = o - a
    dab = d @ ab
    aoab = ao @ ab
    qa = length2 - dab * dab
    qb = length2 * np.einsum("ij,ij->i", ao, d) - aoab * dab
    qc = length2 * np.einsum("ij,ij->i", ao, ao) - aoab * aoab - r * r * length2
    disc = qb * qb - qa * qc
    best = np.full(o.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for sgn in (-1.0, 1.0):
            t = (-qb + sgn * np.sqrt(np.maximum(disc, 0.0))) / qa
            y = aoab + t * dab
            ok = (disc >= 0) & (qa > 1e-12) & (t > 1e-9) & (y > 0) & (y < length2)
            best = np.where(ok & (t < best), t, best)
    best = np.minimum(best, _hit_sphere(o, d, a, r))
    best = np.minimum(best, _hit_sphere(o, d, b, r))
    return best


def _capsule_normal(p, a, b):
    ab = b - a
    s = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    q = a + s[:, None] * ab
    n = p - q
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _hit_box(o, d, lo, hi):
    """Slab test against K boxes at once: lo, hi (K, 3) -> (t (N, K), entry axis (N, K))."""
    lo = np.asarray(lo, dtype=np.float64).reshape(-1, 1, 3)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1, 1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
        tmin = np.fmin(t1, t2)  # fmin/fmax drop the nan of 0 * inf
        tmax = np.fmax(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    ok = (t_near <= t_far) & (t_near > 1e-9)
    return np.where(ok, t_near, np.inf).T, axis.T


def ground_albedo(scene: SceneSpec, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    hx, hz = scene.half_extent
    grass = np.asarray(scene.grass)
    dark = np.asarray(scene.grass_dark)
    stripe = (np.floor((x + hx) / scene.stripe_width).astype(np.int64) % 2).astype(np.float64)
    base = grass + (dark - grass) * stripe[:, None]
    checker = ((np.floor(x / scene.checker_size) + np.floor(z / scene.checker_size)) % 2) * 2 - 1
    base = base * (1.0 + scene.checker_contrast * checker[:, None])
    w = scene.line_width / 2
    rr = np.hypot(x, z)
    on_line = (
        (np.abs(np.abs(x) - hx) < w) & (np.abs(z) <= hz + w)
        | (np.abs(np.abs(z) - hz) < w) & (np.abs(x) <= hx + w)
        | (np.abs(x) < w) & (np.abs(z) <= hz)
        | (np.abs(rr - 9.15) < w)
        | (rr < 0.3)
    )
    inside = (np.abs(x) <= hx + 3.0) & (np.abs(z) <= hz + 3.0)
    out = np.where(inside[:, None], base, np.asarray(scene.surround))
    out = np.where((on_line & inside)[:, None], np.asarray(scene.line_color), out)
    return np.clip(out, 0.0, 1.0)


def _ball_albedo(n: np.ndarray) -> np.ndarray:
    pattern = np.sin(5.0 * n[:, 0]) * np.sin(5.0 * n[:, 1]) * np.sin(5.0 * n[:, 2])
    dark = pattern > 0.35
    return np.where(dark[:, None], 0.1, 0.95) * np.ones((1, 3))


def scene_primitives(scene: SceneSpec, t: float) -> list[tuple[int, int, object]]:
    """(actor index, hit kind, primitive) for every actor primitive at time t."""
    prims = []
    for i, actor in enumerate(scene.actors):
        kind = BALL if actor.kind == "ball" else PLAYER
        for p in actor_state(actor, t, scene.duration):
            prims.append((i, kind, p))
    return prims


def trace_rays(scene: SceneSpec, o: np.ndarray, d: np.ndarray, t: float):
    """Nearest analytic hit per ray -> (color (N, 3), depth (N,), hit kind (N,), actor index (N,))."""
    o = np.asarray(o, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    n_rays = o.shape[0]
    depth = _hit_plane_y0(o, d)
    kind = np.where(np.isfinite(depth), GROUND, MISS)
    actor = np.full(n_rays, -1)
    prim_id = np.full(n_rays, -1)
    normal = np.zeros((n_rays, 3))
    normal[:, 1] = 1.0
    albedo = np.zeros((n_rays, 3))

    if scene.stands:
        th, axes = _hit_box(o, d, [st.lo for st in scene.stands], [st.hi for st in scene.stands])
        k = th.argmin(axis=1)
        rows = np.arange(n_rays)
        th, axis = th[rows, k], axes[rows, k]
        closer = th < depth
        depth = np.where(closer, th, depth)
        kind = np.where(closer, STAND, kind)
        prim_id = np.where(closer, k, prim_id)
        n = np.zeros((n_rays, 3))
        n[rows, axis] = -np.sign(d[rows, axis])
        normal = np.where(closer[:, None], n, normal)

    prims = scene_primitives(scene, t)
    for k, (ai, akind, p) in enumerate(prims):
        if isinstance(p, Sphere):
            th = _hit_sphere(o, d, p.center, p.radius)
        else:
            th = _hit_capsule(o, d, p.a, p.b, p.radius)
        closer = th < depth
        depth = np.where(closer, th, depth)
        kind = np.where(closer, akind, kind)
        actor = np.where(closer, ai, actor)
        prim_id = np.where(closer, k, prim_id)

    hit = np.isfinite(depth)
    pos = o + d * np.where(hit, depth, 0.0)[:, None]
    sel = kind == GROUND
    albedo[sel] = ground_albedo(scene, pos[sel, 0], pos[sel, 2])
    for k, st in enumerate(scene.stands):
        sel = (kind == STAND) & (prim_id == k)
        albedo[sel] = st.color
    for k, (ai, akind, p) in enumerate(prims):
        sel = ((kind == PLAYER) | (kind == BALL)) & (prim_id == k)
        if not sel.any():
            continue
        if isinstance(p, Sphere):
            n = (pos[sel] - p.center) / p.radius
            albedo[sel] = _ball_albedo(n) if p.textured else p.color
        else:
            n = _capsule_normal(pos[sel], p.a, p.b)
            albedo[sel] = p.color
        normal[sel] = n

    lam = np.maximum(0.0, normal @ -scene.light)
    color = albedo * (lam[:, None] * (1 - scene.ambient) + scene.ambient)
    color = np.where(hit[:, None], color, np.asarray(scene.sky))
    return np.clip(color, 0.0, 1.0), depth, kind, actor


def trace_pixel(scene: SceneSpec, camera: CameraModel, px: float, py: float, t: float):
    o, d = generate_rays(camera, np.array([px]), np.array([py]))
    color, depth, kind, _ = trace_rays(scene, o, d, t)
    return color[0], float(depth[0]), HIT_NAMES[int(kind[0])]


def render_view(scene: SceneSpec, camera: CameraModel, t: float, supersample: int = 1):
    """Trace every pixel -> (image (H, W, 3), depth (H, W), kind (H, W), actor (H, W)).

    The image averages a ``supersample`` x ``supersample`` grid of rays per pixel
    (box filter); depth, hit kind and actor index come from the pixel-center ray.
    """
    px, py = pixel_grid(camera)
    o, d = generate_rays(camera, px.ravel(), py.ravel())
    color, depth, kind, actor = trace_rays(scene, o, d, t)
    h, w = camera.height, camera.width
    if supersample > 1:
        offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
        acc = np.zeros_like(color)
        for dy in offsets:
            for dx in offsets:
                o, d = generate_rays(camera, (px + dx).ravel(), (py + dy).ravel())
                acc += trace_rays(scene, o, d, t)[0]
        color = acc / supersample**2
    return color.reshape(h, w, 3), depth.reshape(h, w), kind.reshape(h, w), actor.reshape(h, w)


# ---------------------------------------------------------------------------
# Cameras


@dataclass
class CameraRigSpec:
    kind: str = "closeup"
    count: int = 30
    radius: float = 6.0
    height: float = 1.6
    target: tuple[float, float, float] = (0.0, 1.0, 0.0)
    resolution: tuple[int, int] = (96, 72)
    hfov: float = 60.0  # degrees
    # held-out cameras: "ring" interleaves them on the training ring, "closeup" puts them near the action
    eval_kind: str = "ring"
    eval_count: int = 1
    eval_radius: float = 6.0
    eval_height: float = 2.0
    eval_hfov: float = 60.0
    supersample: int = 3  # rays per pixel along each axis

    def __post_init__(self):
        if self.count < 1 or self.radius <= 0:
            raise ValueError("rig needs count >= 1 and radius > 0")
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")


RIGS = {
    "closeup": dict(kind="closeup", count=30, radius=6.0, height=1.6, target=(0.0, 1.0, 0.0),
                    resolution=(96, 72), hfov=60.0, eval_kind="ring", eval_count=1,
                    eval_radius=6.0, eval_height=2.0, eval_hfov=60.0),
    "broadcast": dict(kind="broadcast", count=20, radius=60.0, height=10.0, target=(0.0, 1.0, 0.0),
                      resolution=(160, 90), hfov=20.0, eval_kind="closeup", eval_count=1,
                      eval_radius=10.0, eval_height=2.0, eval_hfov=40.0),
    "stadium": dict(kind="stadium", count=30, radius=80.0, height=30.0, target=(0.0, 0.0, 0.0),
                    resolution=(256, 144), hfov=90.0, eval_kind="closeup", eval_count=6,
                    eval_radius=12.0, eval_height=3.0, eval_hfov=50.0),
}


def rig_spec(kind: str, **overrides) -> CameraRigSpec:
    if kind not in RIGS:
        raise ValueError(f"unknown rig {kind!r}; choose from {sorted(RIGS)}")
    return CameraRigSpec(**{**RIGS[kind], **overrides})


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, forward)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, cam_up, -forward, position
    return c2w


def _camera(cid, pos, target, resolution, hfov, eval_only=False) -> CameraModel:
    w, h = resolution
    f = (w / 2) / math.tan(math.radians(hfov) / 2)
    return CameraModel(cid, w, h, f, f, w / 2, h / 2, look_at(pos, target), eval_only)


def build_rig(spec: CameraRigSpec) -> list[CameraModel]:
    """Training cameras evenly spaced on a ring, then the held-out cameras."""
    cams = []
    for k in range(spec.count):
        a = 2 * math.pi * k / spec.count
        pos = (spec.radius * math.cos(a), spec.height, spec.radius * math.sin(a))
        cams.append(_camera(k, pos, spec.target, spec.resolution, spec.hfov))
    for j in range(spec.eval_count):
        if spec.eval_kind == "ring":
            a = 2 * math.pi * (j * max(spec.count // max(spec.eval_count, 1), 1) + 0.5) / spec.count
        else:
            a = 2 * math.pi * (j + 0.25) / spec.eval_count
        pos = (spec.eval_radius * math.cos(a), spec.eval_height, spec.eval_radius * math.sin(a))
        target = spec.target if spec.eval_kind == "ring" else (0.0, 1.0, 0.0)
        cams.append(_camera(spec.count + j, pos, target, spec.resolution, spec.eval_hfov, eval_only=True))
    return cams


# ---------------------------------------------------------------------------
# Boxes


def _project_extent(center_cam: np.ndarray, r: float, axis: int):
    """Bounds of x/d (axis 0) or y/d (axis 1) over a sphere in front of the camera."""
    q = center_cam[axis]
    dd = -center_cam[2]
    rho = math.hypot(q, dd)
    theta = math.atan2(q, dd)
    alpha = math.asin(min(r / rho, 1.0))
    return math.tan(theta - alpha), math.tan(theta + alpha)


def sphere_box(camera: CameraModel, center: np.ndarray, r: float) -> Optional[tuple[float, float, float, float]]:
    """Continuous pixel bounds (x0, y0, x1, y1) of a projected sphere, or None if behind."""
    rot = camera.c2w[:3, :3]
    pc = rot.T @ (np.asarray(center) - camera.c2w[:3, 3])
    depth = -pc[2]
    if depth <= -r:
        return None
    if depth <= r:
        # straddles the image plane: unbounded projection
        return (-np.inf, -np.inf, np.inf, np.inf)
    ux0, ux1 = _project_extent(pc, r, 0)
    uy0, uy1 = _project_extent(pc, r, 1)
    x0, x1 = camera.cx + camera.fx * ux0, camera.cx + camera.fx * ux1
    y0, y1 = camera.cy - camera.fy * uy1, camera.cy - camera.fy * uy0
    return x0, y0, x1, y1


def ground_truth_boxes(scene: SceneSpec, camera: CameraModel, t: float) -> list[BBox]:
    """One pixel-aligned, clamped box per visible actor (union over its primitives)."""
    boxes = []
    for actor in scene.actors:
        ext = None
        for prim in actor_state(actor, t, scene.duration):
            c, r = _bounding_sphere(prim)
            b = sphere_box(camera, c, r)
            if b is None:
                continue
            ext = b if ext is None else (min(ext[0], b[0]), min(ext[1], b[1]), max(ext[2], b[2]), max(ext[3], b[3]))
        if ext is None:
            continue
        x0 = max(0, math.floor(ext[0])) if np.isfinite(ext[0]) else 0
        y0 = max(0, math.floor(ext[1])) if np.isfinite(ext[1]) else 0
        x1 = min(camera.width, math.ceil(ext[2])) if np.isfinite(ext[2]) else camera.width
        y1 = min(camera.height, math.ceil(ext[3])) if np.isfinite(ext[3]) else camera.height
        if x0 < x1 and y0 < y1:
            boxes.append(BBox(x0, y0, x1, y1))
    return boxes


# ---------------------------------------------------------------------------
# Export


def generate(scene: SceneSpec, rig: CameraRigSpec, num_timesteps: int) -> DynamicDataset:
    """Render every camera at every timestep (world units, no normalization)."""
    if num_timesteps < 1:
        raise ValueError("need at least one timestep")
    cams = build_rig(rig)
    frames = []
    for cam in cams:
        for ti in range(num_timesteps):
            t = time_of(ti, num_timesteps)
            image, depth, _, _ = render_view(scene, cam, t, rig.supersample)
            frames.append(Frame(cam.id, ti, t, image.astype(np.float32), depth.astype(np.float32),
                                ground_truth_boxes(scene, cam, t)))
    return DynamicDataset(cams, frames, num_timesteps, SceneTransform())


def export_dataset(scene: SceneSpec, rig: CameraRigSpec, num_timesteps: int,
                   resolution: Optional[tuple[int, int]], out_path: os.PathLike) -> Path:
    if resolution is not None:
        rig = replace(rig, resolution=tuple(resolution))
    ds = generate(scene, rig, num_timesteps)
    out = Path(out_path)
    try:
        save_dataset(ds, out)
        with open(out / "scene.json", "w") as f:
            json.dump({"scene": asdict(scene), "rig": asdict(rig)}, f, indent=1)
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from e
    return out
