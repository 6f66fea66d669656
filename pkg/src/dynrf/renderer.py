"""Volume rendering along rays with scene contraction and two-pass (proposal) sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import torch

from .dataset import FAR, NEAR, Ray

# field(x_contracted (N, 3), t (N,), view_dir (N, 3)) -> sigma (N,), rgb (N, 3)
FieldFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]

WEIGHT_FLOOR = 1e-5
DEPTH_EPS = 1e-10


class RenderOutput(NamedTuple):
    rgb: torch.Tensor  # (R, 3)
    depth: torch.Tensor  # (R,)
    acc: torch.Tensor  # (R,)
    weights: torch.Tensor  # (R, N)
    positions: torch.Tensor  # (R, N)


@dataclass
class RenderConfig:
    n_coarse: int = 48
    n_fine: int = 48
    near: float = NEAR
    far: float = FAR
    background: tuple[float, float, float] = (0.55, 0.7, 0.9)
    chunk: int = 4096


def contract(x: torch.Tensor) -> torch.Tensor:
    """Identity inside the unit ball, (2 - 1/|x|) x/|x| outside."""
    n = torch.linalg.norm(x, dim=-1, keepdim=True)
    n_out = n.clamp(min=1.0)
    return torch.where(n <= 1.0, x, (2.0 - 1.0 / n_out) * x / n_out)


def ball_exit(origins: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Distance at which each ray leaves the unit ball (0 when it never enters it)."""
    b = (origins * dirs).sum(-1)
    c = (origins * origins).sum(-1) - 1.0
    disc = b * b - c
    s = -b + torch.sqrt(disc.clamp(min=0.0))
    return torch.where(disc > 0, s.clamp(min=0.0), torch.zeros_like(s))


def warp(s: torch.Tensor, s_b: torch.Tensor) -> torch.Tensor:
    """Marching coordinate: distance up to s_b, then C1-continuous and linear in 1/s."""
    s_b = s_b.expand_as(s)
    outside = 2 * s_b - s_b * s_b / s.clamp(min=1e-12)
    return torch.where(s <= s_b, s, outside)


def unwarp(u: torch.Tensor, s_b: torch.Tensor) -> torch.Tensor:
    s_b = s_b.expand_as(u)
    outside = s_b * s_b / (2 * s_b - u).clamp(min=1e-12)
    return torch.where(u <= s_b, u, outside)


def stratified_samples(near: torch.Tensor, far: torch.Tensor, s_b: torch.Tensor, n: int,
                       generator: Optional[torch.Generator] = None):
    """Equal bins in the marching coordinate; returns (edges (R, n+1), samples (R, n)).

    Without a generator samples sit at bin midpoints (in the warped coordinate);
    with one they are jittered uniformly inside their bins.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    near, far = near.reshape(-1, 1), far.reshape(-1, 1)
    s_b = s_b.reshape(-1, 1).clamp(min=near, max=far)
    h0, h1 = warp(near, s_b), warp(far, s_b)
    steps = torch.linspace(0.0, 1.0, n + 1, dtype=near.dtype)
    edges_h = h0 + (h1 - h0) * steps
    if generator is None:
        frac = torch.full((near.shape[0], n), 0.5, dtype=near.dtype)
    else:
        frac = torch.rand((near.shape[0], n), generator=generator, dtype=near.dtype)
    mids_h = edges_h[:, :-1] + frac * (edges_h[:, 1:] - edges_h[:, :-1])
    edges = unwarp(edges_h, s_b)
    edges[:, 0:1] = near
    edges[:, -1:] = far
    return edges, unwarp(mids_h, s_b)


def composite(positions: torch.Tensor, far: torch.Tensor, sigma: torch.Tensor, rgb: torch.Tensor,
              background: torch.Tensor) -> RenderOutput:
    """Alpha-composite samples at sorted ``positions`` (R, N) along each ray."""
    far = far.reshape(-1, 1).to(positions.dtype)
    deltas = torch.cat([positions[:, 1:] - positions[:, :-1], far - positions[:, -1:]], dim=-1)
    tau = sigma * deltas
    alpha = 1.0 - torch.exp(-tau)
    # exclusive cumulative optical depth; exp(-sum) == prod(1 - alpha)
    trans = torch.exp(-torch.cat([torch.zeros_like(tau[:, :1]), torch.cumsum(tau, dim=-1)[:, :-1]], dim=-1))
    weights = trans * alpha
    acc = weights.sum(-1)
    color = (weights.unsqueeze(-1) * rgb).sum(-2) + (1.0 - acc).unsqueeze(-1) * background
    depth = (weights * positions).sum(-1) / acc.clamp(min=DEPTH_EPS)
    return RenderOutput(color, depth, acc, weights, positions)


def pdf_resample(weights: torch.Tensor, edges: torch.Tensor, n: int,
                 generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Inverse-CDF samples from piecewise-constant per-bin weights (R, B) over edges (R, B+1)."""
    weights = weights.detach() + WEIGHT_FLOOR
    edges = edges.detach()
    pdf = weights / weights.sum(-1, keepdim=True)
    cdf = torch.cat([torch.zeros_like(pdf[:, :1]), torch.cumsum(pdf, dim=-1)], dim=-1)
    cdf[:, -1] = 1.0
    if generator is None:
        u = ((torch.arange(n, dtype=cdf.dtype) + 0.5) / n).expand(cdf.shape[0], n).contiguous()
    else:
        u = torch.sort(torch.rand((cdf.shape[0], n), generator=generator, dtype=cdf.dtype), dim=-1).values
    nb = pdf.shape[-1]
    idx = torch.searchsorted(cdf, u, right=True).clamp(1, nb)
    c0 = torch.gather(cdf, -1, idx - 1)
    c1 = torch.gather(cdf, -1, idx)
    e0 = torch.gather(edges, -1, idx - 1)
    e1 = torch.gather(edges, -1, idx)
    t = ((u - c0) / (c1 - c0).clamp(min=1e-12)).clamp(0.0, 1.0)
    return e0 + t * (e1 - e0)


def _query(fn: FieldFn, origins, dirs, times, positions):
    r, n = positions.shape
    pts = origins.unsqueeze(1) + positions.unsqueeze(-1) * dirs.unsqueeze(1)
    x = contract(pts.reshape(-1, 3))
    t = times.reshape(-1, 1).expand(r, n).reshape(-1)
    d = dirs.unsqueeze(1).expand(r, n, 3).reshape(-1, 3)
    sigma, rgb = fn(x, t, d)
    return sigma.reshape(r, n), rgb.reshape(r, n, 3)


def coarse_pass(proposal: FieldFn, origins: torch.Tensor, dirs: torch.Tensor, times: torch.Tensor,
                config: RenderConfig, generator: Optional[torch.Generator] = None):
    """Stratified samples on the proposal field -> (coarse output, resampled fine positions)."""
    dtype = origins.dtype
    r = origins.shape[0]
    near = torch.full((r,), config.near, dtype=dtype)
    far = torch.full((r,), config.far, dtype=dtype)
    edges, s_coarse = stratified_samples(near, far, ball_exit(origins, dirs), config.n_coarse, generator)
    sig_c, rgb_c = _query(proposal, origins, dirs, times, s_coarse)
    coarse = composite(s_coarse, far, sig_c, rgb_c, torch.tensor(config.background, dtype=dtype))
    return coarse, pdf_resample(coarse.weights, edges, config.n_fine, generator)


def render_rays(field: FieldFn, proposal: FieldFn, origins: torch.Tensor, dirs: torch.Tensor,
                times: torch.Tensor, config: RenderConfig,
                generator: Optional[torch.Generator] = None,
                fine_positions: Optional[torch.Tensor] = None) -> tuple[RenderOutput, RenderOutput]:
    """Coarse pass on ``proposal``, fine pass on ``field``; returns (fine, coarse).

    ``generator`` enables stratified jitter and random resampling; ``None`` is fully
    deterministic. ``fine_positions`` replaces the resampled positions (they carry
    no gradient either way).
    """
    coarse, resampled = coarse_pass(proposal, origins, dirs, times, config, generator)
    if fine_positions is None:
        fine_positions = resampled
    s_all = torch.sort(torch.cat([coarse.positions, fine_positions.detach()], dim=-1), dim=-1).values
    sig_f, rgb_f = _query(field, origins, dirs, times, s_all)
    far = torch.full((origins.shape[0],), config.far, dtype=origins.dtype)
    fine = composite(s_all, far, sig_f, rgb_f, torch.tensor(config.background, dtype=origins.dtype))
    return fine, coarse


def render_ray(field: FieldFn, proposal: FieldFn, ray: Ray, config: RenderConfig,
               generator: Optional[torch.Generator] = None,
               dtype: torch.dtype = torch.float64) -> tuple[RenderOutput, RenderOutput]:
    cfg = RenderConfig(config.n_coarse, config.n_fine, ray.near, ray.far, config.background, config.chunk)
    o = torch.as_tensor(ray.origin, dtype=dtype).reshape(1, 3)
    d = torch.as_tensor(ray.direction, dtype=dtype).reshape(1, 3)
    t = torch.tensor([ray.time], dtype=dtype)
    return render_rays(field, proposal, o, d, t, cfg, generator)


@torch.no_grad()
def render_image(field: FieldFn, proposal: FieldFn, origins: torch.Tensor, dirs: torch.Tensor,
                 time: float, config: RenderConfig) -> dict[str, torch.Tensor]:
    """Deterministic chunked rendering of a flat ray batch; returns rgb/depth/acc."""
    outs = {"rgb": [], "depth": [], "acc": []}
    for i in range(0, origins.shape[0], config.chunk):
        o, d = origins[i:i + config.chunk], dirs[i:i + config.chunk]
        t = torch.full((o.shape[0],), time, dtype=o.dtype)
        fine, _ = render_rays(field, proposal, o, d, t, config)
        outs["rgb"].append(fine.rgb)
        outs["depth"].append(fine.depth)
        outs["acc"].append(fine.acc)
    return {k: torch.cat(v) for k, v in outs.items()}
