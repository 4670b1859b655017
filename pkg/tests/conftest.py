"""Shared pytest config: acceptance-criterion result reporting."""

from contextlib import contextmanager

_ACCEPTANCE_RESULTS = {}


@contextmanager
def acceptance(number: int, description: str):
    """Record one acceptance criterion's outcome for the terminal summary."""
    _ACCEPTANCE_RESULTS[number] = (description, False)
    yield
    _ACCEPTANCE_RESULTS[number] = (description, True)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for number in sorted(_ACCEPTANCE_RESULTS):
        description, ok = _ACCEPTANCE_RESULTS[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"  [{status}] {number:>2}. {description}")
