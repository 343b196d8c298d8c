import os

import pytest
import torch

from satlab.config import SynthConfig
from satlab.synth import build_dataset

torch.set_num_threads(1)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def small_synth() -> SynthConfig:
    return SynthConfig(train_scenes=16, val_scenes=6)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory, small_synth):
    out = tmp_path_factory.mktemp("small_data")
    build_dataset(small_synth, 3, out)
    return out


@pytest.fixture
def double_precision(monkeypatch):
    monkeypatch.setenv("SATLAB_PRECISION", "double")
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


def pytest_configure(config):
    os.environ.setdefault("SATLAB_PRECISION", "single")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def tiny_train_config(**kw):
    """A train config small enough to run a few epochs in seconds."""
    from satlab.config import ModelConfig, TrainConfig

    model = dict(d=16, heads=2, text_layers=1, fusion_layers=1, hidden=16, p=16, points=32)
    model.update(kw.pop("model", {}))
    base = dict(epochs=2, batch_size=8, lr0=1e-3, log_every=1, model=ModelConfig(**model))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_ds(small_data):
    from satlab.data import load_dataset

    return load_dataset(small_data, n_points=32)
