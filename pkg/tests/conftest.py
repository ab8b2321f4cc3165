import time
from contextlib import contextmanager

import pytest

# criterion number -> (passed, title, detail)
ACCEPTANCE: dict = {}


@contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Record one acceptance line; failures inside the block still fail the test."""
    details: list = []
    start = time.perf_counter()
    try:
        yield details
        elapsed = time.perf_counter() - start
        if budget_s is not None:
            details.append(f"{elapsed:.1f}s of {budget_s:.0f}s budget")
            assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s:.0f}s"
    except BaseException as exc:
        details.append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        _record(number, False, title, details)
        raise
    _record(number, True, title, details)


def _record(number, passed, title, details):
    ACCEPTANCE[number] = (passed, title, "; ".join(details))
    line = _format(number, *ACCEPTANCE[number])
    print("\n" + line, flush=True)


def _format(number, passed, title, detail):
    return f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(_format(number, *ACCEPTANCE[number]))
