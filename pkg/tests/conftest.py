import pytest

CRITERIA = {
    1: "numerical core",
    2: "density sanity",
    3: "metric oracles",
    4: "Stage-2 unit behavior",
    5: "mixture NLL vs single experts",
    6: "no weight collapse",
    7: "determinism and containment",
}

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    store = request.config.stash[_RESULTS]

    def record(number, passed, detail=""):
        store[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        if number in store:
            passed, detail = store[number]
            status = "PASS" if passed else "FAIL"
        else:
            status, detail = "NOT RUN", ""
        line = f"criterion {number} ({name}): {status}"
        terminalreporter.write_line(f"{line} | {detail}" if detail else line)
