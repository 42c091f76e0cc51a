import numpy as np
import pytest
import torch

from dragkit.bench.corpus import SceneObject, SceneRecord
from dragkit.denoiser import Denoiser, DenoiserConfig, load_denoiser
from dragkit.guidance import DragPair, DragSpec, capsule_mask
from dragkit.schedule import make_schedule, subsample_schedule

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
PILOT_DIR = FIXTURES / "pilot"

TINY_CONFIG = DenoiserConfig(
    image_size=16,
    base_channels=16,
    channel_multipliers=(1, 2, 4),
    attention_levels=(1, 2),
    num_res_blocks=1,
    embed_dim=32,
    num_heads=4,
)


@pytest.fixture(scope="session")
def tiny_sched():
    # 100 training steps strided to 10 sampling steps
    return subsample_schedule(make_schedule(100), 10)


@pytest.fixture(scope="session")
def tiny_denoiser(tiny_sched):
    torch.manual_seed(0)
    return Denoiser(TINY_CONFIG, sched=tiny_sched)


@pytest.fixture(scope="session")
def tiny_scene():
    return SceneRecord(
        image_size=16,
        objects=[SceneObject(shape="circle", color="red", size="medium", center=(5.0, 8.0))],
    )


@pytest.fixture(scope="session")
def tiny_drag(tiny_scene):
    handle, target = (5.0, 8.0), (11.0, 8.0)
    mask = capsule_mask(16, 16, handle, target, 5.0)
    return DragSpec(pairs=[DragPair(handle=handle, target=target)], editable_mask=mask)


@pytest.fixture(scope="session")
def pilot_sched():
    return subsample_schedule(make_schedule(1000), 50)


@pytest.fixture(scope="session")
def pilot_denoiser(pilot_sched):
    path = PILOT_DIR / "denoiser.pt"
    if not path.exists():
        pytest.fail(f"pilot checkpoint missing: {path} (run scripts/train_pilot_denoiser.py)")
    return load_denoiser(path, sched=pilot_sched)


@pytest.fixture(scope="session")
def pilot_quality(pilot_denoiser):
    from dragkit.quality import load_quality_model

    path = PILOT_DIR / "quality.pt"
    if not path.exists():
        pytest.fail(f"pilot quality checkpoint missing: {path} (run scripts/make_pilot_quality.py)")
    return load_quality_model(path, pilot_denoiser)


@pytest.fixture(scope="session")
def pilot_scene():
    return SceneRecord(
        image_size=32,
        objects=[SceneObject(shape="circle", color="red", size="medium", center=(11.0, 16.0))],
    )


@pytest.fixture(scope="session")
def pilot_drag():
    handle, target = (11.0, 16.0), (21.0, 16.0)
    mask = capsule_mask(32, 32, handle, target, 8.0)
    return DragSpec(pairs=[DragPair(handle=handle, target=target)], editable_mask=mask)
