import numpy as np
import pytest
import torch

from garmentdiff.data import make_toy_dataset
from garmentdiff.models import build_bundle
from garmentdiff.unet import UNetConfig

torch.set_num_threads(1)


@pytest.fixture
def small_cfg():
    return UNetConfig(depth=2, base_channels=16, embedding_dim=16, time_embedding_dim=32, groups=4)


@pytest.fixture
def records():
    return make_toy_dataset(4, 3)


@pytest.fixture
def bundle(small_cfg):
    b = build_bundle(small_cfg, with_garment_encoder=True, with_controlnet=True)
    return b.eval()


@pytest.fixture
def bundle64(small_cfg):
    b = build_bundle(small_cfg, with_garment_encoder=True, with_controlnet=True, dtype=torch.float64)
    return b.eval()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = [v for reps in terminalreporter.stats.values() for r in reps
             for k, v in getattr(r, "user_properties", ()) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)
