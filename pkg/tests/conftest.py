import numpy as np
import pytest

from gated_interp.data import Dataset, DatasetDescriptor, synthesize_dataset


def make_dataset(n=40, T=3, seed=0, log_scaled=False, name="toy"):
    rng = np.random.default_rng(seed)
    desc = DatasetDescriptor(name, tuple(f"f{k}" for k in range(T)), log_scaled, "USD")
    price = rng.uniform(10, 20, n) if log_scaled else rng.uniform(1e5, 1e6, n)
    return Dataset(desc, np.arange(1, n + 1), rng.uniform(47.4, 47.7, n), rng.uniform(-122.4, -122.0, n),
                   rng.uniform(0, 10, (n, T)), price)


@pytest.fixture
def toy():
    return make_dataset()


@pytest.fixture(scope="session")
def synth_log():
    return synthesize_dataset(400, 3, 1.0, 0.05, 3).to_log_scale()


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion: int, ok, detail: str):
    ACCEPTANCE[criterion] = ("PASS" if ok is True else "FAIL" if ok is False else ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status:7s} {detail}")
