"""Central finite-difference verification of the analytic render-loss gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .renderer import coarse_pass
from .trainer import DynamicModel, TrainConfig, backprop, total_loss

FD_STEP = 1e-4
REL_TOL = 1e-3
# parameters whose analytic gradient is below this are not drawn: their finite
# difference is dominated by rounding (~1e-16 / FD_STEP)
MIN_GRAD = 1e-7


@dataclass
class GradCheckResult:
    seed: int
    field: str
    checks: list[dict] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c["rel_error"] for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c["rel_error"] < REL_TOL for c in self.checks)


def tiny_config(field_kind: str, num_timesteps: int = 4) -> TrainConfig:
    if field_kind == "hexplane":
        fcfg = dict(base_resolution=4, num_scales=2, feature_dim=2, hidden=8, layers=2)
    else:
        fcfg = dict(log2_table_size=6, num_levels=2, base_resolution=4, max_resolution=8, hidden=8, layers=2)
    return TrainConfig(
        iterations=1, field=field_kind, field_config=fcfg,
        proposal_config=dict(base_resolution=4, num_scales=1, feature_dim=2, hidden=8, layers=1),
        n_coarse=4, n_fine=4, tv_weight=1e-2, ts_weight=1e-2,
    )


def _random_batch(n_rays: int, num_timesteps: int, gen: torch.Generator):
    """Rays from inside the unit ball pointing roughly back through it, random targets."""
    kw = dict(generator=gen, dtype=torch.float64)
    o = (torch.rand(n_rays, 3, **kw) - 0.5) * 0.6
    d = torch.nn.functional.normalize(-o + 0.2 * torch.randn(n_rays, 3, **kw), dim=-1)
    ti = torch.randint(0, num_timesteps, (n_rays,), generator=gen)
    t = ti.to(torch.float64) / max(num_timesteps - 1, 1)
    return o, d, t, torch.rand(n_rays, 3, **kw)


def _randomize(model: DynamicModel, gen: torch.Generator) -> None:
    """Move parameters away from their (partly constant) initial values."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "planes" in name:
                p.copy_(0.5 + 0.5 * torch.rand(p.shape, generator=gen, dtype=p.dtype))
            elif "tables" in name:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)
            elif "bias" in name:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)


def check_gradients(seed: int, field_kind: str = "hexplane", n_params: int = 20, n_rays: int = 3,
                    num_timesteps: int = 4, step: float = FD_STEP,
                    corrupt: Optional[float] = None) -> GradCheckResult:
    """Compare backprop against central differences on ``n_params`` random parameter entries.

    Sample positions of the fine pass are recorded once and held fixed, so
    both routes differentiate the same function. ``corrupt`` scales the
    analytic gradient (negative control).
    """
    config = tiny_config(field_kind, num_timesteps)
    gen = torch.Generator().manual_seed(seed)
    model = DynamicModel.build(config, num_timesteps, gen).double()
    _randomize(model, gen)
    o, d, t, target = _random_batch(n_rays, num_timesteps, gen)

    with torch.no_grad():
        _, fine_pos = coarse_pass(model.proposal, o, d, t, config.render_config())

    def loss_fn() -> torch.Tensor:
        return total_loss(model, config, o, d, t, target, fine_positions=fine_pos)[0]

    grads = backprop(model, loss_fn())
    named = dict(model.named_parameters())
    candidates = [(n, i) for n, g in grads.items() for i in torch.nonzero(g.reshape(-1).abs() > MIN_GRAD).reshape(-1).tolist()]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_params, len(candidates)), replace=False)
    result = GradCheckResult(seed, field_kind)
    for k in sorted(picks):
        name, i = candidates[k]
        flat = named[name].data.view(-1)
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + step
            lp = loss_fn().item()
            flat[i] = orig - step
            lm = loss_fn().item()
            flat[i] = orig
        numeric = (lp - lm) / (2 * step)
        analytic = grads[name].reshape(-1)[i].item()
        if corrupt is not None:
            analytic *= corrupt
        denom = max(abs(analytic), abs(numeric))
        rel = abs(analytic - numeric) / denom if denom > 0 else 0.0
        result.checks.append({"param": name, "index": i, "analytic": analytic,
                              "numeric": numeric, "rel_error": rel})
    return result
