import numpy as np
import pytest

from episodic_nca.data import SyntheticSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    spec = SyntheticSpec(train_classes=12, val_classes=4, test_classes=6, samples_per_class=24, seed=5)
    return generate_synthetic(spec)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
