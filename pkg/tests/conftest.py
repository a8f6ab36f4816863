import pytest

# one seed for every stochastic acceptance check, fixed before any result was inspected
ACCEPTANCE_SEED = 7

_criteria: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name, ok, detail=""):
        _criteria.append((name, "PASS" if ok else "FAIL", detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _criteria:
        terminalreporter.write_line(f"{status}  {name}  {detail}")
