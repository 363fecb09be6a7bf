import pytest

_LINES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_LINES] = {}


@pytest.fixture(scope="session")
def acceptance_report(request):
    """``report(number, passed, detail)`` records one summary line per criterion."""
    lines = request.config.stash[_LINES]

    def report(number, passed, detail):
        lines[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number], flush=True)

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
