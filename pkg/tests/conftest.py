import pytest

_RESULTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    details = [v for k, v in item.user_properties if k == "detail"]
    _RESULTS.setdefault(marker.args[0], []).append((item.name, rep.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        entries = _RESULTS[n]
        ok = all(passed for _, passed, _ in entries)
        notes = "; ".join(d for _, _, ds in entries for d in ds)
        failed = [name for name, passed, _ in entries if not passed]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}"
        if notes:
            line += f"  ({notes})"
        if failed:
            line += f"  failing: {', '.join(failed)}"
        terminalreporter.write_line(line)
