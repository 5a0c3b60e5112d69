from pathlib import Path

import pytest
import torch

DATA = Path(__file__).resolve().parents[1] / "src" / "barcodemlm" / "data"


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def mini_corpus_path() -> Path:
    return DATA / "mini_corpus.tsv"


@pytest.fixture
def golden_path() -> Path:
    return DATA / "mini_corpus_golden.tsv"


# acceptance criteria: one PASS/FAIL line each in the terminal summary
_CRITERIA: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test backs a named acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.failed:
        _CRITERIA[name] = "FAIL"
    elif rep.when == "call":
        _CRITERIA.setdefault(name, "SKIP" if rep.skipped else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        terminalreporter.write_line(f"{_CRITERIA[name]} {name}")
