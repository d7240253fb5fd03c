import pathlib

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
GOLDEN = ROOT / "tests" / "golden"


@pytest.fixture
def scenario_path():
    def get(name):
        return SCENARIOS / f"{name}.json"
    return get
