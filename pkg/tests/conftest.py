"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line for each."""
import pytest

_RESULTS: dict[int, tuple[bool, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.fixture
def detail(request):
    """Append a short measurement to the criterion's summary line."""
    lines = []
    request.node._criterion_detail = lines
    return lambda text: lines.append(text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.failed and number not in _RESULTS):
        _RESULTS[number] = (rep.passed, title, "; ".join(getattr(item, "_criterion_detail", [])))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, title, text = _RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}" + (f"  [{text}]" if text else ""))
