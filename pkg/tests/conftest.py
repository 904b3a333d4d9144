import numpy as np
import pytest

from lamb_locate.pipeline import Dataset, split_dataset
from lamb_locate.plate import NoiseConfig, PlateConfig, SensorArray, generate_dataset
from lamb_locate.presets import DESK_DURATION, DESK_N_IMPACTS, DESK_PLATE, DESK_SENSORS, DESK_SPLIT

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def short_plate():
    """Default plate with a 2 ms pre-trigger delay so recordings stay small."""
    return PlateConfig(trigger_delay=0.002)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """30 impacts on the corner sensors, 8 ms recordings, split 20/5/5."""
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(root, 30, DESK_PLATE, DESK_SENSORS, NoiseConfig(), duration=DESK_DURATION, seed=11)
    ds = Dataset.open(root)
    from lamb_locate.pipeline import SplitSpec
    return ds.with_manifest(split_dataset(ds.manifest, SplitSpec(20, 5, 5, seed=0)))


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The acceptance-scale synthetic set: 1000 impacts, 800/100/100."""
    root = tmp_path_factory.mktemp("desk")
    generate_dataset(root, DESK_N_IMPACTS, DESK_PLATE, DESK_SENSORS, NoiseConfig(),
                     duration=DESK_DURATION, seed=1)
    ds = Dataset.open(root)
    return ds.with_manifest(split_dataset(ds.manifest, DESK_SPLIT))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
