import pytest
from hypothesis import settings

settings.register_profile("ci", deadline=None, print_blob=True)
settings.load_profile("ci")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): numbered acceptance check")


def pytest_terminal_summary(terminalreporter):
    rows = []
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            label = dict(getattr(rep, "user_properties", ())).get("criterion")
            if label is not None and (rep.when == "call" or status != "passed"):
                rows.append((label, "PASS" if status == "passed" else "FAIL"))
    if not rows:
        return
    terminalreporter.section("acceptance")
    for (n, label), verdict in sorted(set(rows)):
        terminalreporter.write_line(f"[{verdict}] {n}. {label}")


@pytest.fixture(autouse=True)
def _record_criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", tuple(marker.args)))
