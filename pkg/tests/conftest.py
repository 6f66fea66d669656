import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from dynrf.dataset import load_dataset
from dynrf.synthgen import export_dataset, rig_spec, single_player_scene

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(max(1, os.cpu_count() or 1))

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    """2 training cameras + 1 held-out camera, 3 timesteps, 16x12 pixels."""
    out = tmp_path_factory.mktemp("tiny_ds")
    export_dataset(single_player_scene(), rig_spec("closeup", count=2, supersample=1), 3, (16, 12), out)
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


@pytest.fixture(scope="session")
def desk_dataset_dir(tmp_path_factory):
    """Close-up rig, 8 training cameras + 1 held-out ring camera, 8 timesteps, 96x72."""
    out = tmp_path_factory.mktemp("desk_ds")
    export_dataset(single_player_scene(), rig_spec("closeup", count=8), 8, (96, 72), out)
    return out


@pytest.fixture(scope="session")
def desk_dataset(desk_dataset_dir):
    return load_dataset(desk_dataset_dir)


@pytest.fixture(scope="session")
def desk_runs(desk_dataset, tmp_path_factory):
    """Lazily trained 2000-iteration desk models, one per field kind, shared across modules."""
    from dynrf.trainer import DynamicModel, TrainConfig, evaluate_model, train

    cache = {}

    def get(kind: str):
        if kind not in cache:
            cfg = TrainConfig(field=kind, seed=0)
            untrained = DynamicModel.build(cfg, desk_dataset.num_timesteps,
                                           torch.Generator().manual_seed(cfg.seed))
            before = evaluate_model(untrained, desk_dataset, cfg.render_config())
            model, log = train(desk_dataset, cfg)
            after = evaluate_model(model, desk_dataset, cfg.render_config())
            path = tmp_path_factory.mktemp(f"desk_{kind}") / "model.dfck"
            model.save(path, extra={"train_config": cfg.to_json()})
            cache[kind] = dict(config=cfg, model=model, log=log, before=before, after=after,
                               checkpoint=path)
        return cache[kind]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
