import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pulseshaper.koopman import EigenfunctionEvaluator, prepare
from pulseshaper.model import builtin_lorenz, builtin_repressilator8, builtin_toxin_antitoxin

# compiled kernels make the first example slow; timing is not what is tested
settings.register_profile(
    "pkg", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def rep_system():
    return prepare(builtin_repressilator8())


@pytest.fixture(scope="session")
def ta_system():
    return prepare(builtin_toxin_antitoxin())


@pytest.fixture(scope="session")
def lorenz_system():
    return prepare(builtin_lorenz())


@pytest.fixture(scope="session")
def rep_ev(rep_system):
    return EigenfunctionEvaluator.for_target(rep_system)


@pytest.fixture(scope="session")
def ta_ev(ta_system):
    return EigenfunctionEvaluator.for_target(ta_system)


@pytest.fixture(scope="session")
def lorenz_ev(lorenz_system):
    return EigenfunctionEvaluator.for_target(lorenz_system)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    def report(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert passed, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
