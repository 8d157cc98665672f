import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparseview.geometry import CameraIntrinsics, CameraPose
from scipy.spatial.transform import Rotation

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_pose(rng, trans_scale=1.0):
    R = Rotation.from_rotvec(rng.normal(size=3) * 0.5).as_matrix()
    return CameraPose(R, rng.normal(size=3) * trans_scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intr100():
    return CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


# "criterion N: PASS/FAIL ..." lines recorded by the acceptance suite
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
