import numpy as np
import pytest

from fasten import data


def make_splits(seed=0, gamma=0.6, n_classes=3, per_class=400, dim=8, kind="symmetric",
                fractions=(0.75, 0.05, 0.1, 0.1)):
    s = data.generate_blobs(n_classes, per_class, dim, seed=seed)
    sp = data.split(s, fractions, seed=seed, n_classes=n_classes)
    if kind == "symmetric":
        data.inject_symmetric_noise(sp.noisy_train, gamma, seed, n_classes)
    else:
        data.inject_asymmetric_noise(sp.noisy_train, gamma, None, seed, n_classes)
    return sp


@pytest.fixture
def small_splits():
    return make_splits()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
