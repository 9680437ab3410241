import pytest

from avnet.sim import bundled_names, load, run_scenario

CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def bundled_runs():
    """One run of every bundled scenario, shared across test modules."""
    return {name: run_scenario(load(name)) for name in bundled_names()}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def report(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
