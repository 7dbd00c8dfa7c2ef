import numpy as np
import pytest

from forecaster.profiler import profile_all
from forecaster.workload import GenerationRecipe, MachineParams, generate_app

# short apps keep the unit tests quick; the acceptance file uses full-size ones
SMALL = GenerationRecipe(total_instructions=5_000_000, min_phase_instructions=300_000, library_size=10)


@pytest.fixture(scope="session")
def small_recipe():
    return SMALL


@pytest.fixture(scope="session")
def machine():
    return MachineParams()


@pytest.fixture(scope="session")
def small_app():
    return generate_app("t0", 3, SMALL)


@pytest.fixture(scope="session")
def small_profiles(small_app):
    return profile_all(small_app, 250_000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each; printed together at the end of the run
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion, ok, detail):
        _ACCEPTANCE[criterion] = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])
