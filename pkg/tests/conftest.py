import numpy as np
import pytest

from aadnet.dsp import trial_dims
from aadnet.splits import SplitPlan


class ArrayTrials:
    """In-memory stand-in for a trial container."""

    def __init__(self, eeg, spec_a, spec_b, labels):
        self.eeg, self.spec_a, self.spec_b = eeg, spec_a, spec_b
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        idx = np.asarray(idx)
        return self.eeg[idx], self.spec_a[idx], self.spec_b[idx], self.labels[idx]


def random_trials(n, seed=0, duration=3):
    rng = np.random.default_rng(seed)
    eeg_t, spec_t = trial_dims(duration)
    return ArrayTrials(rng.standard_normal((n, eeg_t, 10)).astype(np.float32),
                       rng.standard_normal((n, spec_t, 257)).astype(np.float32),
                       rng.standard_normal((n, spec_t, 257)).astype(np.float32),
                       np.arange(n) % 2)


def simple_plan(n_train, n_val, n_test):
    a = np.arange(n_train + n_val + n_test)
    return SplitPlan(a[:n_train], a[n_train:n_train + n_val], a[n_train + n_val:], np.array([], dtype=np.int64))


@pytest.fixture
def tiny_data():
    return random_trials(14, seed=1), simple_plan(10, 2, 2)


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
