import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from graspforge.assets import GRIPPER, GRIPPER_COUNTS, TOY_HAND, TOY_HAND_COUNTS
from graspforge.geometry import box_mesh
from graspforge.kinematics import JointConfig, load_robot, sample_link_points

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def hand():
    return load_robot(TOY_HAND)


@pytest.fixture(scope="session")
def hand_pts(hand):
    return sample_link_points(hand, TOY_HAND_COUNTS, seed=0)


@pytest.fixture(scope="session")
def gripper():
    return load_robot(GRIPPER)


@pytest.fixture(scope="session")
def gripper_pts(gripper):
    return sample_link_points(gripper, GRIPPER_COUNTS, seed=0)


@pytest.fixture(scope="session")
def block():
    """Box the gripper closes on: 6 x 4 x 3 cm, centered between the fingers."""
    return box_mesh((0.06, 0.04, 0.03), center=(0.0, 0.05, 0.0), name="block")


@pytest.fixture(scope="session")
def pinch(gripper):
    """Stable gripper grasp on ``block`` (fingers 0.5 mm inside the faces)."""
    return JointConfig.rest(gripper).with_angles([0.0295, 0.0295])


def random_config(robot, rng, base_scale=0.1):
    from graspforge.transforms import matrix_to_quat, random_rotation

    angles = rng.uniform(robot.lower, robot.upper)
    return JointConfig(rng.normal(scale=base_scale, size=3), matrix_to_quat(random_rotation(rng)), angles)


# one PASS/FAIL line per acceptance criterion, printed after the run
_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    rep = outcome.get_result()
    key = (m.args[0], m.args[1])
    if rep.when == "call" or rep.failed:
        _CRITERIA[key] = _CRITERIA.get(key, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), ok in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{n}] {title}")
