import numpy as np
import pytest

from sproutlab.data import synth_blobs
from sproutlab.models import Model, ModelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    return synth_blobs(2, 200, 16, 10.0, seed=3)


@pytest.fixture(scope="session")
def tiny_cnn():
    spec = ModelSpec("cnn", (1, 8, 8), 3, 1, pool=4)
    return Model.init(spec, seed=7)


@pytest.fixture(scope="session")
def blob_models(blobs):
    """Natural and adversarially trained CNNs on the 4x4 blob data."""
    from sproutlab.attacks import AttackSpec
    from sproutlab.training import TrainConfig, train
    from sproutlab.vicinity import VicinityMode

    common = dict(epochs=5, batch_size=32, pool=2, eval_each_epoch=False)
    nat, _ = train(blobs, TrainConfig(VicinityMode("natural"), **common))
    adv, _ = train(blobs, TrainConfig(VicinityMode("adv_train", attack=AttackSpec(0.1, steps=5)), **common))
    return nat, adv


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
