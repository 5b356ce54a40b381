import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from upccd.integrals import HubbardSpec, hubbard_integrals, rotate_orbitals, OrbitalRotation

settings.register_profile("repo", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("repo")

FIXTURES = Path(__file__).parent / "fixtures"
TWO_SITE_EXACT = (4 - math.sqrt(32)) / 2  # (U - sqrt(U^2 + 16 t^2)) / 2 at t=1, U=4


@pytest.fixture
def fixture_dir():
    return FIXTURES


@pytest.fixture
def dimer_sites():
    return hubbard_integrals(HubbardSpec(2, 1.0, 4.0))


@pytest.fixture
def dimer_mo(dimer_sites):
    kappa = np.array([[0.0, math.pi / 4], [-math.pi / 4, 0.0]])
    return rotate_orbitals(dimer_sites, OrbitalRotation(kappa))


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
