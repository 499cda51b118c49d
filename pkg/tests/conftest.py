import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number, reported in the summary")


@pytest.fixture
def report(request):
    """Attach a one-line detail string to the current acceptance test."""
    lines = []
    request.node.stash[_DETAIL] = lines
    return lines.append


_DETAIL = pytest.StashKey[list]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(item.stash.get(_DETAIL, []))
    _RESULTS[mark.args[0]] = ("PASS" if rep.passed else "FAIL", item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, name, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}" + (f"  [{detail}]" if detail else ""))
