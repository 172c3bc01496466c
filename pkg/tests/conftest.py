from __future__ import annotations

import pytest

from stride.gateway import Gateway
from stride.harness import HarnessCounts, cooperative_provider, generate
from stride.pipeline import Engine, RunConfig

HARNESS_SEED = 11


@pytest.fixture(scope="session")
def harness():
    return generate(HARNESS_SEED, HarnessCounts(entities=120, sequential_q=20, parallel_q=20, forkjoin_q=20))


@pytest.fixture(scope="session")
def harness_index(harness):
    return harness.index()


@pytest.fixture
def oracle_engine(harness, harness_index):
    def make(config: RunConfig | None = None, provider=None) -> Engine:
        return Engine(Gateway(provider or cooperative_provider(harness)), harness_index, config)

    return make


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
