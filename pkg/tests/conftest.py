"""Session-wide trained runs, shared by the acceptance suite and the trained-model tests.

Each named experiment trains at most once per session with its default
configuration; the wall time of the run is kept alongside the result.
"""

import time

import pytest

from jointflow.cli import default_config, run_experiment


class TrainedRuns:
    def __init__(self, root):
        self.root = root
        self._cache = {}

    def get(self, experiment, **kwargs):
        key = (experiment, tuple(sorted(kwargs.items())))
        if key not in self._cache:
            cfg = default_config(experiment, **kwargs)
            t0 = time.perf_counter()
            result = run_experiment(cfg, self.root)
            result.extras["seconds"] = time.perf_counter() - t0
            self._cache[key] = result
        return self._cache[key]


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    return TrainedRuns(tmp_path_factory.mktemp("trained"))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
