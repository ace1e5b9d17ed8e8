from pathlib import Path

import pytest

from spd_calibration.fileio import builtin_constants, load_constants, load_simulation_scenario

DATA_DIR = Path(__file__).parent / "data"
SCENARIO_DIR = Path(__file__).parents[2] / "scenarios"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def fiber_constants():
    return load_constants(builtin_constants("fiber_851"))


@pytest.fixture
def freespace_constants():
    return load_constants(builtin_constants("freespace_851"))


@pytest.fixture
def fiber_scenario():
    return load_simulation_scenario(SCENARIO_DIR / "fiber_851_spad.toml")


@pytest.fixture
def freespace_scenario():
    return load_simulation_scenario(SCENARIO_DIR / "freespace_851_spad.toml")


@pytest.fixture
def bistable_scenario():
    return load_simulation_scenario(SCENARIO_DIR / "bistable_dark.toml")
