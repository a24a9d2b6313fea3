import pytest

_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``record(number, ok, detail)`` stores one acceptance verdict for the summary."""
    store = request.config.stash.setdefault(_KEY, {})

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
