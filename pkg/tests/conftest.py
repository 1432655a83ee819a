"""Collects the acceptance verdicts and prints them after the run."""

VERDICTS: dict = {}


def record(number, ok, detail):
    VERDICTS[number] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
