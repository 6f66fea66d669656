"""4D radiance fields: the six-plane factorization and the sliding-window hash grid.

Both fields take contracted positions in [-2, 2]^3 and normalized times in
[0, 1], look up feature vectors, and decode them with a small MLP into a
non-negative density and an RGB color.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F

PRIMES = (1, 2654435761, 805459861)

# (first axis, second axis) of each plane; axis 3 is time
PLANE_AXES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
PLANE_NAMES = ("xy", "xz", "yz", "xt", "yt", "zt")


class ConfigError(ValueError):
    pass


def to_unit_cube(x: torch.Tensor) -> torch.Tensor:
    """Map contracted coordinates in [-2, 2] to [0, 1]."""
    return (x + 2.0) / 4.0


def bilinear_sample(plane: torch.Tensor, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Interpolate a plane at normalized coordinates (u, v) in [0, 1] -> (N, F).

    ``plane`` is stored channel-first as (F, Rv, Ru): u runs along the last axis,
    v along the middle one, and vertex (i, j) sits at (i / (Ru - 1), j / (Rv - 1)).
    Coordinates outside [0, 1] are clamped to the border.
    """
    grid = torch.stack([u, v], dim=-1).mul(2.0).sub(1.0).view(1, 1, -1, 2)
    out = F.grid_sample(plane.unsqueeze(0), grid, mode="bilinear",
                        padding_mode="border", align_corners=True)
    return out[0, :, 0].t()


def sh_encoding(dirs: torch.Tensor) -> torch.Tensor:
    """Real spherical harmonics up to degree 2 (9 coefficients)."""
    x, y, z = dirs.unbind(-1)
    return torch.stack([
        torch.full_like(x, 0.28209479177387814),
        -0.4886025119029199 * y,
        0.4886025119029199 * z,
        -0.4886025119029199 * x,
        1.0925484305920792 * x * y,
        -1.0925484305920792 * y * z,
        0.31539156525252005 * (2 * z * z - x * x - y * y),
        -1.0925484305920792 * x * z,
        0.5462742152960396 * (x * x - y * y),
    ], dim=-1)


class DecoderMLP(nn.Module):
    """ReLU MLP producing (density logit, 3 color logits)."""

    def __init__(self, in_dim: int, hidden: int = 64, layers: int = 2, view_dependent: bool = False):
        super().__init__()
        self.in_dim = in_dim
        self.view_dependent = view_dependent
        widths = [in_dim + (9 if view_dependent else 0)] + [hidden] * layers + [4]
        self.linears = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))

    def reset_parameters(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            for lin in self.linears:
                bound = math.sqrt(6.0 / lin.in_features)
                lin.weight.uniform_(-bound, bound, generator=generator)
                lin.bias.zero_()

    def forward(self, features: torch.Tensor, view_dir: Optional[torch.Tensor] = None):
        if features.shape[-1] != self.in_dim:
            raise ConfigError(f"decoder expects {self.in_dim} features, got {features.shape[-1]}")
        h = features
        if self.view_dependent:
            if view_dir is None:
                raise ConfigError("view-dependent decoder needs view directions")
            h = torch.cat([h, sh_encoding(view_dir)], dim=-1)
        for lin in self.linears[:-1]:
            h = F.relu(lin(h))
        out = self.linears[-1](h)
        return F.softplus(out[..., 0]), torch.sigmoid(out[..., 1:])


def decode(decoder: DecoderMLP, features: torch.Tensor, view_dir: Optional[torch.Tensor] = None):
    return decoder(features, view_dir)


@dataclass
class HexplaneConfig:
    base_resolution: int = 16
    num_scales: int = 3
    feature_dim: int = 8
    time_resolution: int = 8
    hidden: int = 64
    layers: int = 2
    view_dependent: bool = False

    @classmethod
    def full_scale(cls, num_timesteps: int) -> "HexplaneConfig":
        # 2^6 .. 2^11
        return cls(base_resolution=64, num_scales=6, feature_dim=32, time_resolution=num_timesteps)


class HexplaneField(nn.Module):
    kind = "hexplane"

    def __init__(self, config: HexplaneConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        if config.base_resolution < 2 or config.time_resolution < 1:
            raise ConfigError("plane resolutions must be at least 2")
        self.config = config
        t_res = max(config.time_resolution, 2)
        self.planes = nn.ParameterList()
        for s in range(config.num_scales):
            res = config.base_resolution * 2**s
            for a, b in PLANE_AXES:
                shape = (config.feature_dim, t_res if b == 3 else res, res)
                self.planes.append(nn.Parameter(torch.empty(shape)))
        self.decoder = DecoderMLP(config.num_scales * config.feature_dim, config.hidden,
                                  config.layers, config.view_dependent)
        self.reset_parameters(generator or torch.Generator().manual_seed(0))

    def reset_parameters(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            for k, p in enumerate(self.planes):
                if PLANE_AXES[k % 6][1] == 3:
                    p.fill_(1.0)
                else:
                    p.uniform_(-0.1, 0.1, generator=generator)
        self.decoder.reset_parameters(generator)

    def scale_planes(self, scale: int) -> list[torch.Tensor]:
        return list(self.planes[6 * scale: 6 * scale + 6])

    def spatial_planes(self) -> list[torch.Tensor]:
        return [p for k, p in enumerate(self.planes) if PLANE_AXES[k % 6][1] != 3]

    def time_planes(self) -> list[torch.Tensor]:
        return [p for k, p in enumerate(self.planes) if PLANE_AXES[k % 6][1] == 3]

    def features(self, xyz01: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        coords = torch.cat([xyz01, t.unsqueeze(-1)], dim=-1)
        out = []
        for s in range(self.config.num_scales):
            feat = None
            for plane, (a, b) in zip(self.scale_planes(s), PLANE_AXES):
                f = bilinear_sample(plane, coords[:, a], coords[:, b])
                feat = f if feat is None else feat * f
            out.append(feat)
        return torch.cat(out, dim=-1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, view_dir: Optional[torch.Tensor] = None):
        return self.decoder(self.features(to_unit_cube(x), t), view_dir)


def hexplane_features(field: HexplaneField, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Features at contracted positions ``x`` (N, 3) and times ``t`` (N,)."""
    return field.features(to_unit_cube(x), t)


@dataclass
class TemporalHashConfig:
    log2_table_size: int = 15
    num_levels: int = 4
    base_resolution: int = 16
    max_resolution: int = 128
    window: int = 2
    entry_dim: int = 9
    hidden: int = 64
    layers: int = 2
    view_dependent: bool = False

    @classmethod
    def for_timesteps(cls, num_timesteps: int, **kw) -> "TemporalHashConfig":
        window = kw.pop("window", 2)
        return cls(window=window, entry_dim=window + max(num_timesteps - 1, 0), **kw)

    @classmethod
    def full_scale(cls, num_timesteps: int) -> "TemporalHashConfig":
        return cls(log2_table_size=20, num_levels=16, base_resolution=16, max_resolution=2048,
                   window=2, entry_dim=2 + 63)

    @property
    def num_windows(self) -> int:
        return self.entry_dim - self.window + 1

    def resolutions(self) -> list[int]:
        if self.num_levels == 1:
            return [self.base_resolution]
        growth = (self.max_resolution / self.base_resolution) ** (1.0 / (self.num_levels - 1))
        return [int(round(self.base_resolution * growth**lv)) for lv in range(self.num_levels)]


def spatial_hash(ijk: torch.Tensor, log2_size: int) -> torch.Tensor:
    """XOR of coordinate-wise products with fixed primes, modulo 2^log2_size."""
    h = ijk[..., 0] * PRIMES[0]
    h = torch.bitwise_xor(h, ijk[..., 1] * PRIMES[1])
    h = torch.bitwise_xor(h, ijk[..., 2] * PRIMES[2])
    return torch.bitwise_and(h, (1 << log2_size) - 1)


_CORNERS = torch.tensor([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])


def window_blend(entries: torch.Tensor, t: torch.Tensor, window: int) -> torch.Tensor:
    """Read a length-``window`` slice of each (N, D) entry at fractional offset t * (C - 1)."""
    n_windows = entries.shape[-1] - window + 1
    if n_windows == 1:
        return entries[..., :window]
    tau = t.clamp(0.0, 1.0) * (n_windows - 1)
    o0 = torch.floor(tau).clamp(max=n_windows - 2)
    frac = (tau - o0).unsqueeze(-1)
    idx = o0.long().unsqueeze(-1) + torch.arange(window)
    lo = torch.gather(entries, -1, idx)
    hi = torch.gather(entries, -1, idx + 1)
    return (1 - frac) * lo + frac * hi


class TemporalHashField(nn.Module):
    kind = "temporal_hash"

    def __init__(self, config: TemporalHashConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        if config.log2_table_size < 4 or config.window < 1 or config.entry_dim < config.window:
            raise ConfigError(f"invalid hash field config {config}")
        self.config = config
        size = 1 << config.log2_table_size
        self.tables = nn.ParameterList(
            nn.Parameter(torch.empty(size, config.entry_dim)) for _ in range(config.num_levels)
        )
        self.decoder = DecoderMLP(config.num_levels * config.window, config.hidden,
                                  config.layers, config.view_dependent)
        self.reset_parameters(generator or torch.Generator().manual_seed(0))

    def reset_parameters(self, generator: torch.Generator) -> None:
        with torch.no_grad():
            for tab in self.tables:
                tab.uniform_(-1e-4, 1e-4, generator=generator)
        self.decoder.reset_parameters(generator)

    def level_entries(self, level: int, xyz01: torch.Tensor) -> torch.Tensor:
        """Trilinearly interpolated stored vectors (N, entry_dim) at one level."""
        res = self.config.resolutions()[level]
        x = xyz01.clamp(0.0, 1.0) * (res - 1)
        i0 = torch.floor(x).clamp(max=res - 2)
        frac = x - i0
        corners = i0.long().unsqueeze(1) + _CORNERS  # (N, 8, 3)
        idx = spatial_hash(corners, self.config.log2_table_size)
        vals = self.tables[level][idx]  # (N, 8, D)
        c = _CORNERS.to(frac.dtype)
        w = torch.prod(torch.where(c.bool(), frac.unsqueeze(1), 1 - frac.unsqueeze(1)), dim=-1)
        return (w.unsqueeze(-1) * vals).sum(dim=1)

    def features(self, xyz01: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return torch.cat([
            window_blend(self.level_entries(lv, xyz01), t, self.config.window)
            for lv in range(self.config.num_levels)
        ], dim=-1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, view_dir: Optional[torch.Tensor] = None):
        return self.decoder(self.features(to_unit_cube(x), t), view_dir)


def hash_features(field: TemporalHashField, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    return field.features(to_unit_cube(x), t)


FIELD_KINDS = {
    "hexplane": (HexplaneField, HexplaneConfig),
    "temporal_hash": (TemporalHashField, TemporalHashConfig),
}


def build_field(kind: str, config, generator: Optional[torch.Generator] = None) -> nn.Module:
    try:
        cls, _ = FIELD_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown field kind {kind!r}") from None
    return cls(config, generator)


# ---------------------------------------------------------------------------
# .dfck checkpoints: magic, u32 header length, JSON header, little-endian f32 arrays

MAGIC = b"DFCK"


def save_checkpoint(path: os.PathLike, fields: dict[str, nn.Module], extra: Optional[dict] = None) -> None:
    header = {"fields": {}, "extra": extra or {}}
    blobs = io.BytesIO()
    for name, module in fields.items():
        params = []
        for pname, p in module.named_parameters():
            arr = p.detach().to(torch.float32).contiguous().numpy().astype("<f4")
            params.append({"name": pname, "shape": list(arr.shape)})
            blobs.write(arr.tobytes())
        header["fields"][name] = {"kind": module.kind, "config": asdict(module.config), "params": params}
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(blobs.getvalue())


def load_checkpoint(path: os.PathLike) -> tuple[dict[str, nn.Module], dict]:
    import numpy as np

    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a .dfck checkpoint")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n))
        data = f.read()
    offset = 0
    fields = {}
    for name, spec in header["fields"].items():
        cls, cfg_cls = FIELD_KINDS[spec["kind"]]
        module = cls(cfg_cls(**spec["config"]))
        named = dict(module.named_parameters())
        for entry in spec["params"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
            offset += 4 * count
            with torch.no_grad():
                named[entry["name"]].copy_(torch.from_numpy(arr.copy()))
        fields[name] = module
    return fields, header.get("extra", {})
