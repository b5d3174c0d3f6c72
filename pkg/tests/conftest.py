import sys
from collections import OrderedDict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rareger.corpus import EvalSet, EvalUtterance, RareWordList  # noqa: E402
from rareger.services import ConfusionModel  # noqa: E402
from rareger.simulate import simulated_clients  # noqa: E402

# confusables map to exactly one rare word, so harvested rules never conflict
MEDICAL_CONFUSIONS = {
    "anemia": (("enemy", 3.0), ("anemic", 2.0), ("a-nemia", 1.0)),
    "tachycardia": (("tacky", 2.0), ("tachycardic", 1.0)),
    "bronchitis": (("bronzitis", 1.0), ("bronchial", 1.0)),
    "hematoma": (("hermitoma", 1.0), ("hematomas", 1.0)),
}


@pytest.fixture
def medical_words():
    return RareWordList.from_surfaces(["anemia", "tachycardia", "bronchitis", "hematoma"], "EN")


@pytest.fixture
def noisy_channel():
    return ConfusionModel(MEDICAL_CONFUSIONS, p_sub=0.8, seed=7)


@pytest.fixture
def sim(tmp_path):
    """Factory for offline clients rooted under the test's tmp dir."""

    def make(confusion, name="sim", **kwargs):
        return simulated_clients(tmp_path / name, confusion, **kwargs)

    return make


@pytest.fixture
def tiny_eval():
    utts = [
        EvalUtterance("a", "the patient has anemia"),
        EvalUtterance("b", "no sign of tachycardia today"),
        EvalUtterance("c", "the weather is fine"),
    ]
    return EvalSet(tuple(utts), "tiny")


# -- acceptance summary ---------------------------------------------------------------------

_ACCEPTANCE = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    ok, names = _ACCEPTANCE.get(n, (True, title))
    if report.when == "call" or report.failed:
        ok = ok and not report.failed
    _ACCEPTANCE[n] = (ok, names)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, title = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}")
