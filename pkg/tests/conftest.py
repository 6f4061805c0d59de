import sys
from importlib.resources import files
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wcforecast.ingest import load_tournament  # noqa: E402

DATA = Path(__file__).parent / "data"

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def spec2019():
    return load_tournament(files("wcforecast") / "data" / "wwc2019.json")


@pytest.fixture(scope="session")
def data_dir():
    return DATA


class ConstantModel:
    """Stub intensity model: the same expected goals in every match."""

    def __init__(self, lam=1.2):
        self.lam = lam

    def intensity(self, team, opponent, groupstage):
        return self.lam


class TableModel:
    """Stub intensity model: intensity depends on the named team only."""

    def __init__(self, per_team, default=1.0):
        self.per_team = dict(per_team)
        self.default = default

    def intensity(self, team, opponent, groupstage):
        return self.per_team.get(team, self.default)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
