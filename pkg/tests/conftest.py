import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def record(request):
    """Attach a measured value to the current test's report line."""
    def _record(text: str) -> None:
        request.node.user_properties.append(("measured", text))
    return _record


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    entry = _CRITERIA.setdefault(crit, {"outcome": "PASS", "notes": []})
    if report.failed:
        entry["outcome"] = "FAIL"
    if report.when == "call":
        entry["notes"] = [v for k, v in report.user_properties if k == "measured"]


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        e = _CRITERIA[crit]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {crit:2d}: {e['outcome']}" + (f" | {notes}" if notes else ""))
