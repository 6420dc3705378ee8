import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hybridplan.geometry import build_reference_path
from hybridplan.scenario import (
    make_lane_follow,
    make_straight_road,
    make_t_junction,
)


@pytest.fixture(scope="session")
def straight_path():
    xs = np.arange(0.0, 120.01, 0.5)
    line = np.stack([xs, np.zeros_like(xs)], axis=1)
    return build_reference_path(line)


@pytest.fixture(scope="session")
def curved_path():
    # constant-radius arc, R = 30
    theta = np.linspace(-0.5 * np.pi, 0.5 * np.pi, 400)
    line = np.stack([30 * np.cos(theta), 30 * np.sin(theta)], axis=1)
    return build_reference_path(line)


@pytest.fixture(scope="session")
def straight_scenario():
    return make_straight_road("fixture_straight")


@pytest.fixture(scope="session")
def lead_scenario():
    return make_straight_road("fixture_lead", lead_speed=6.0)


@pytest.fixture(scope="session")
def scurve_scenario():
    return make_lane_follow("fixture_scurve")


@pytest.fixture(scope="session")
def junction_scenario():
    return make_t_junction("fixture_junction", oncoming_speed=8.0, time_offset=1.0)


@pytest.fixture(scope="session")
def corpus_dir():
    root = Path(__file__).resolve().parents[1] / "scenarios"
    if not root.is_dir():
        pytest.skip("bundled scenario corpus not generated")
    return root
