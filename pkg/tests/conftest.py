import numpy as np
import pytest

from curvestab.field import GridSpec, gradient, make_ring_field
from curvestab.flows import FlowSpec, run_flow
from curvestab.levelset import extract_curves, init_circle

RING = dict(cx=64.0, cy=64.0, r0=25.0, sigma=3.0)


@pytest.fixture(scope="session")
def grid128():
    return GridSpec(128, 128, 1.0)


@pytest.fixture(scope="session")
def ring(grid128):
    return make_ring_field(grid128, RING["cx"], RING["cy"], RING["r0"], RING["sigma"])


@pytest.fixture(scope="session")
def ring_grad(ring):
    return gradient(ring)


@pytest.fixture(scope="session")
def gd_ring_run(grid128, ring_grad):
    """Gradient descent on the ring field from a circle of radius r0 + 10."""
    ls0 = init_circle(grid128, RING["cx"], RING["cy"], RING["r0"] + 10)
    ls, rec = run_flow(FlowSpec(), ring_grad, ls0)
    return ls, rec, extract_curves(ls)


def radii(curve, cx=RING["cx"], cy=RING["cy"]):
    return np.hypot(curve.vertices[:, 0] - cx, curve.vertices[:, 1] - cy)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                lines.append((nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
