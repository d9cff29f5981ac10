import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dcvlc.config import SceneConfig, config_from_dict  # noqa: E402
from dcvlc.receivers import collect_pod  # noqa: E402
from dcvlc.scene import build_scene  # noqa: E402

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def small_room_config(occlusion=True, **simulation):
    """2 x 2 x 2 m room, 0.5 m patches, one row of two short racks and a
    single ceiling unit."""
    sim = {"resolution_first": 0.5, "resolution_second": 0.5, "occlusion": occlusion}
    sim.update(simulation)
    return config_from_dict({
        "room": {"length": 2.0, "width": 2.0, "height": 2.0, "communication_floor_height": 0.1},
        "racks": {"row_x": [1.0], "per_row": 2, "width": 0.4, "depth": 0.4, "height": 0.6},
        "light_units": {"positions": [[1.0, 1.0, 2.0]]},
        "simulation": sim,
    })


@pytest.fixture(scope="session")
def default_scene():
    return build_scene(SceneConfig())


@pytest.fixture(scope="session")
def default_signals(default_scene):
    return collect_pod(default_scene)


@pytest.fixture(scope="session")
def small_scene():
    return build_scene(small_room_config())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
