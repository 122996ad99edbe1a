import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# Acceptance reporting: tests marked ``criterion(n, title)`` get one PASS/FAIL
# line in the terminal summary, with details they attach via ``record``.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.fixture
def record(request):
    """Attach a detail string to the current test's acceptance line."""

    def _record(text):
        request.node.user_properties.append(("detail", text))
        print(text)

    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA[mark.args[0]] = (mark.args[1], rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[n]
        line = f"{'PASS' if ok else 'FAIL'} [{n}] {title}"
        if details:
            line += ": " + "; ".join(details)
        terminalreporter.write_line(line)
