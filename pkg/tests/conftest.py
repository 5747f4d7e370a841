import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))  # tests/scenarios.py

settings.register_profile("seqnav", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("seqnav")

from seqnav.world import Landmark, Scene, SceneSpec, generate_scene  # noqa: E402


def open_room(rows=21, cols=21, landmarks=(), walls=()):
    """Free rectangle with a one-cell border wall; ``walls`` lists extra blocked cells."""
    occ = np.zeros((rows, cols), np.uint8)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = 1
    for cell in walls:
        occ[cell] = 1
    sem = np.full((rows, cols), 2, np.uint8)
    sem[occ == 1] = 1
    return Scene(occ, sem, [Landmark(l, p) for l, p in landmarks], id="room")


@pytest.fixture
def room():
    return open_room()


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(3, SceneSpec(n_rooms=4, n_landmarks=8, room_min=10, room_max=14))
