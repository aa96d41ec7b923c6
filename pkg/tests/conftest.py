import json
import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, derandomize=True, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def images_doc(entries, key):
    """Build a detections / ground-truth document from ``{id: [records]}``."""
    return json.dumps(
        {"images": [{"id": i, "width": 100, "height": 100, key: recs} for i, recs in entries.items()]}
    )


@pytest.fixture
def det_doc():
    return lambda entries: images_doc(entries, "detections")


@pytest.fixture
def gt_doc():
    return lambda entries: images_doc(entries, "objects")


# -- acceptance summary -------------------------------------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[name] = "PASS" if report.passed else report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        terminalreporter.write_line(f"{outcome:<6} {name}")
