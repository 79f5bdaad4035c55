import numpy as np
import pytest
from hypothesis import settings

from shapespace.augment import augment_corpus, policy_presets
from shapespace.datasets import assign_folds
from shapespace.synthetic import SyntheticConfig, generate_synthetic_corpus

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

TINY = SyntheticConfig(n_categories=5, per_category=2, n_extra=10, n_tuberlin=20, n_sketchy=20,
                       n_classes=8, tuberlin_classes=(0, 6), sketchy_classes=(2, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small four-source corpus: records (with folds), dissimilarities and augmented instances."""
    records, d = generate_synthetic_corpus(TINY, np.random.default_rng(0))
    records = assign_folds(records, 5, np.random.default_rng(1))
    instances = augment_corpus(records, policy_presets("desk", (4, 2, 2, 2)), seed=0)
    return records, d, instances


# -- acceptance summary --------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and report.passed:
        return
    number, title = marker.args
    ok = report.passed and _CRITERIA.get(number, (title, True))[1]
    _CRITERIA[number] = (title, ok)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}")
