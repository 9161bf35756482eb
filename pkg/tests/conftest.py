import pytest

from fosgsolve.fosg import enumerate_game
from fosgsolve.games import make_game


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running oracle or benchmark checks")


def _index(name, params=None):
    return enumerate_game(make_game(name, params))


@pytest.fixture(scope="session")
def rps():
    return _index("rps")


@pytest.fixture(scope="session")
def rps_std():
    return _index("rps", {"orientation": "standard"})


@pytest.fixture(scope="session")
def kuhn():
    return _index("kuhn")


@pytest.fixture(scope="session")
def leduc():
    return _index("leduc")


@pytest.fixture(scope="session")
def mini():
    return _index("mini_poker_asym")


@pytest.fixture(scope="session")
def cmp_index():
    return _index("matching_pennies_coordinated")


@pytest.fixture(scope="session")
def glasses():
    return _index("glasses")


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Collects (criterion, passed, detail) lines for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
