import numpy as np
import pytest

from tacshape.primitives import box_mesh, icosphere


@pytest.fixture(scope="session")
def unit_cube():
    """Cube spanning [-1, 1]^3."""
    return box_mesh([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def half_cube():
    """Cube spanning [-0.5, 0.5]^3."""
    return box_mesh([0.5, 0.5, 0.5])


@pytest.fixture(scope="session")
def unit_sphere():
    """Icosphere of radius 1, 3 subdivisions (1280 faces)."""
    return icosphere(3)


@pytest.fixture(scope="session")
def fine_sphere():
    return icosphere(4)


def obj_text_cube():
    """Minimal OBJ of the unit cube [0,1]^3 with quad faces."""
    verts = [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]
    lines = [f"v {x} {y} {z}" for x, y, z in verts]
    # 1-based quad faces with outward winding
    lines += [
        "f 1 3 4 2",   # z=0
        "f 5 6 8 7",   # z=1
        "f 1 2 6 5",   # y=0
        "f 3 7 8 4",   # y=1
        "f 1 5 7 3",   # x=0
        "f 2 4 8 6",   # x=1
    ]
    return "\n".join(lines) + "\n"


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
