import math

import pytest
from hypothesis import settings

from paircrystal.dynamics import STANDARD_INIT

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Periodic orbits of the model found by refine_orbit near the four
# reference starting points: (seed X0, refined X0, refined T).
REFINED_ORBITS = {
    -0.12171: (-0.12295900288922007, 40.82194610774013),
    -0.045: (-0.04550239321171268, 179.38710519852918),
    0.0843: (0.08490737535821781, 56.458315432085044),
    0.2509: (0.24985813661328787, 107.87853994648383),
}


@pytest.fixture
def standard():
    return STANDARD_INIT


@pytest.fixture(params=sorted(REFINED_ORBITS), ids=lambda x: f"seed{x}")
def refined_orbit(request):
    X0, T = REFINED_ORBITS[request.param]
    return STANDARD_INIT.replace(X=X0), T


PI = math.pi


def pytest_terminal_summary(terminalreporter):
    lines = [value for key in ("passed", "failed")
             for rep in terminalreporter.stats.get(key, [])
             if rep.when == "call"
             for name, value in rep.user_properties if name == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][2:])):
            terminalreporter.write_line(line)
