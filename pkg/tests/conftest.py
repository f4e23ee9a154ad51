import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bev.body_model import make_toy_assets
from bev.camera import CameraIntrinsics, VoxelGrid, build_anchor_maps

settings.register_profile("bev", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bev")


@pytest.fixture(scope="session")
def assets():
    return make_toy_assets(64, seed=0)


@pytest.fixture(scope="session")
def cam():
    return CameraIntrinsics()


@pytest.fixture(scope="session")
def grid():
    return VoxelGrid()


@pytest.fixture(scope="session")
def anchors(grid, cam):
    return build_anchor_maps(grid, cam)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE[n] = f"criterion {n} {status}: {title}" + (f" [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
