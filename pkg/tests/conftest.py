import functools
import time

import pytest

from gated_xtfc.forward import optimize_gate
from gated_xtfc.kernels import BoundaryData, convection_diffusion

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@functools.lru_cache(maxsize=None)
def _optimized(nu):
    t0 = time.perf_counter()
    sol = optimize_gate(convection_diffusion(nu), BoundaryData(0.0, 1.0))
    sol.wall_time = time.perf_counter() - t0
    return sol


@pytest.fixture(scope="session")
def optimized_gate():
    """Full-size gate search per viscosity, shared across modules.

    The returned solution carries the search time as ``wall_time``.
    """
    return _optimized


@pytest.fixture(scope="session")
def acceptance(request):
    """Record ``(criterion, passed, detail)``; printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(n: int, passed: bool, detail: str):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
