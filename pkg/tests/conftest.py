import contextlib

import pytest

ACCEPTANCE = pytest.StashKey[dict]()


class _Check:
    detail = ""


@pytest.fixture
def acceptance(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    @contextlib.contextmanager
    def criterion(number: int, title: str):
        check = _Check()
        try:
            yield check
        except BaseException as exc:
            reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            lines[number] = f"criterion {number:2d} FAIL  {title}: {reason}"
            print(lines[number])
            raise
        lines[number] = f"criterion {number:2d} PASS  {title}" + (f": {check.detail}" if check.detail else "")
        print(lines[number])

    return criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
