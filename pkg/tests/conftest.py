import pytest

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one summary line per acceptance check."""
    lines = request.config.stash[_REPORT_KEY]

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
