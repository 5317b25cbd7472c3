import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from anthrokit import registry
from anthrokit.body import make_default_model
from anthrokit.landmarks import LandmarkSet


@pytest.fixture(scope="session")
def model():
    return make_default_model(0)


def random_landmarks(rng, subject_id="S", pose_id="P"):
    """Loose humanoid-ish cloud: pelvis anchors spread apart, Nuchale above."""
    coords = rng.normal(scale=300.0, size=(registry.N_LANDMARKS, 3))
    return LandmarkSet(coords, subject_id, pose_id)


def random_rigid(rng):
    return Rotation.random(random_state=rng).as_matrix(), rng.uniform(-2000, 2000, size=3)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def report_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
