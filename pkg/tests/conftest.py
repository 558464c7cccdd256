import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "detail": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["detail"] = [v for k, v in item.user_properties if k == "detail"]
        line = f"CRITERION {number} {'PASS' if entry['ok'] else 'FAIL'}: {title}"
        if entry["detail"]:
            line += " | " + "; ".join(entry["detail"])
        print("\n" + line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        line = f"CRITERION {number:>2} {'PASS' if entry['ok'] else 'FAIL'}: {entry['title']}"
        if entry["detail"]:
            line += " | " + "; ".join(entry["detail"])
        terminalreporter.write_line(line)
