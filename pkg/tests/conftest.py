import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mapcon.synthetic import make_dataset

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def dataset_4x4(tmp_path_factory):
    return make_dataset(4, 4, seed=3, split=1.0, out_dir=tmp_path_factory.mktemp("ds44"))


@pytest.fixture(scope="session")
def dataset_semi(tmp_path_factory):
    return make_dataset(4, 4, seed=5, split=0.5, out_dir=tmp_path_factory.mktemp("ds_semi"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
