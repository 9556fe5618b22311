from __future__ import annotations

import pytest
from hypothesis import settings

from frobvir import config, frobman, hierarchy, virasoro
from support import ACCEPTANCE

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture(scope="session")
def kdv_cfg():
    return config.catalog("kdv")


@pytest.fixture(scope="session")
def p1_cfg():
    return config.catalog("p1")


@pytest.fixture(scope="session")
def kdv_dlambda(kdv_cfg):
    M = kdv_cfg.manifold()
    return virasoro.DLambdaOp.from_chart(kdv_cfg.chart(M), kdv_cfg.b_fixture())


@pytest.fixture(scope="session")
def p1_dlambda(p1_cfg):
    return virasoro.DLambdaOp.from_chart(p1_cfg.chart())


@pytest.fixture(scope="session")
def kdv_tables():
    M = frobman.kdv()
    T = frobman.theta(M, 7)
    FT = hierarchy.flows(M, T, 6)
    OT = hierarchy.omega(M, T, 6)
    return M, T, FT, OT


@pytest.fixture(scope="session")
def p1_tables():
    M = frobman.p1()
    T = frobman.theta(M, 4)
    FT = hierarchy.flows(M, T, 3)
    OT = hierarchy.omega(M, T, 3)
    return M, T, FT, OT
