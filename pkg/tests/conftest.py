import pytest

_RESULTS: dict = {}


class _Recorder:
    def __call__(self, number: int, passed: bool, detail: str) -> None:
        _RESULTS[number] = (bool(passed), detail)


@pytest.fixture
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
