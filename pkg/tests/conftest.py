import numpy as np
import pytest

from drcombine import generate_population, scenario


@pytest.fixture(scope="session")
def pop1():
    """Full-size scenario 1 population (J=1000)."""
    return generate_population(scenario(1))


@pytest.fixture(scope="session")
def pop3():
    return generate_population(scenario(3))


@pytest.fixture(scope="session")
def small_pop():
    """Scenario-3 surface on 60 clusters; quick to sample from."""
    return generate_population(scenario(3, J=60, M=12, n_house=10, L=2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
