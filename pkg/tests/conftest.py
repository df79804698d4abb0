"""Shared fixtures: the packaged transcript corpus and module catalog."""

from importlib import resources

import pytest

from yamlsmith import backend, validate


@pytest.fixture(scope="session")
def corpus_path():
    ref = resources.files("yamlsmith").joinpath("data", "transcripts.jsonl")
    with resources.as_file(ref) as path:
        yield str(path)


@pytest.fixture(scope="session")
def store(corpus_path):
    return backend.load_transcripts(corpus_path)


@pytest.fixture(scope="session")
def records(store):
    """Fixture records keyed by id (annexe4.tir1 and so on)."""
    return {record.fixture_id: record for record in store.records}


@pytest.fixture(scope="session")
def catalog():
    return validate.packaged_catalog()


# Ship-gate reporting: tests marked @pytest.mark.acceptance(number, slug) get
# one criterion line each at the end of the run, whatever the capture mode.

_ACCEPTANCE: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            _ACCEPTANCE[item.nodeid] = (marker.args[0], marker.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _ACCEPTANCE:
        return
    if report.failed:
        _OUTCOMES[report.nodeid] = "FAIL"
    elif report.skipped:
        _OUTCOMES.setdefault(report.nodeid, "SKIP")
    elif report.when == "call":
        _OUTCOMES.setdefault(report.nodeid, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    rows = sorted((_ACCEPTANCE[nodeid], verdict) for nodeid, verdict in _OUTCOMES.items())
    terminalreporter.section("acceptance")
    for (number, slug), verdict in rows:
        terminalreporter.write_line(f"criterion {number} ({slug}): {verdict}")
