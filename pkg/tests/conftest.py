import pytest
from hypothesis import HealthCheck, settings

from leafgrid import fixtures

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def g1():
    return fixtures.g1()


@pytest.fixture
def g2():
    return fixtures.g2()


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(label, passed, detail)``."""
    def add(label, passed, detail=""):
        _ACCEPTANCE.append((label, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(_ACCEPTANCE, key=lambda t: int(t[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
