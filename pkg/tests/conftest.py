import numpy as np
import pytest

from microcrack import wavegen
from microcrack.harness import TrainConfig, load_data, train
from microcrack.model import ModelConfig

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("data")


@pytest.fixture(scope="session")
def small_dataset(data_dir):
    path = data_dir / "small.mcwv"
    samples = wavegen.generate_dataset(8, 3, path)
    return path, samples


@pytest.fixture(scope="session")
def grid_dataset(data_dir):
    path = data_dir / "grid.mcwv"
    wavegen.generate_dataset(32, 5, path)
    return path


@pytest.fixture(scope="session")
def micro_data(small_dataset):
    return load_data(small_dataset[0], ModelConfig.micro().temporal_len)


@pytest.fixture(scope="session")
def overfit_run(small_dataset, micro_data, tmp_path_factory):
    """GELU + CWDL micro-model trained on the 8 samples it is scored on."""
    ckpt = tmp_path_factory.mktemp("ckpt") / "overfit.ckpt"
    cfg = TrainConfig(activation="gelu", loss="cwdl", lr=1e-3, epochs=200, batch_size=8,
                      temporal_len=80, val_fraction=0.0, seed=0, checkpoint=str(ckpt))
    model, result = train(cfg, micro_data)
    return cfg, model, result, ckpt


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``acceptance(n, title, passed, detail)``."""
    def record(n, title, passed, detail=""):
        ACCEPTANCE[n] = (title, bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
