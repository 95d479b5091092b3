import pytest

_ACCEPTANCE = {}


class AcceptanceLog:
    def record(self, number, title, passed, detail, seconds, limit):
        ok = bool(passed) and seconds < limit
        timing = f"{seconds:.1f}s / limit {limit:g}s"
        _ACCEPTANCE[number] = (title, ok, f"{detail}; {timing}")
        print(f"\ncriterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}; {timing}")
        return ok


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  "
                                    f"{title}: {detail}")
