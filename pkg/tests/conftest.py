import numpy as np
import pytest

from kinterp.flow import FlowField
from kinterp.simulator import SceneSpec, Sprite


def position(v1, a, t):
    """Oracle: position relative to L1 under constant acceleration."""
    return np.asarray(v1, float) * t + 0.5 * np.asarray(a, float) * t * t


def kinematic_displacements(v1, a, t0):
    """S01, S12, S23 by differencing positions at L0=-t0, L1=0, L2=t1, L3=t1+t0."""
    t1 = 1.0 - t0
    x = lambda t: position(v1, a, t)
    return x(0) - x(-t0), x(t1) - x(0), x(t1 + t0) - x(t1)


def const_field(uv, shape=(12, 12), anchor="L1"):
    return FlowField.constant(shape[0], shape[1], uv, anchor)


@pytest.fixture
def kin_fields():
    """Constant fields for v1=(10,0), a=(4,0), t0=0.7."""
    s01, s12, s23 = kinematic_displacements((10, 0), (4, 0), 0.7)
    return const_field(s01), const_field(s12), const_field(s23)


def sprite_scene(t0_max=0.9, width=128, height=128, background=0, supersample=4):
    """Two fixed sprites, valid over [0, 1 + t0_max]."""
    sprites = (
        Sprite(11, (30.0, 40.0), (22.0, 9.0), (4.0, -3.0), 16.0),
        Sprite(23, (92.0, 88.0), (-16.0, -12.0), (-2.0, 5.0), 15.0),
    )
    return SceneSpec(width, height, sprites, background, supersample, 0.0, 1.0 + t0_max)


@pytest.fixture(scope="session")
def scene():
    return sprite_scene()


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}
N_CRITERIA = 9


def record(number, ok, detail=""):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(n, (False, "(not run or errored)"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
