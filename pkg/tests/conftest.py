import pytest


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def record(request):
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def _record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config._acceptance[n] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
