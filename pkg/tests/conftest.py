import pytest

# criterion id -> [title, status, details]
_CRITERIA: dict[int, list] = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when != "call" and rep.passed:
        return
    n, title = marker.args
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    entry = _CRITERIA.setdefault(n, [title, "PASS", []])
    if _RANK[status] > _RANK[entry[1]]:
        entry[1] = status
    entry[2] += [v for k, v in rep.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, details = _CRITERIA[n]
        extra = f" ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"{status} criterion {n}: {title}{extra}")
