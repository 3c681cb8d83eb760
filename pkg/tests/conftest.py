import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

from adaptstress.preprocessing import preprocess_cohort  # noqa: E402
from adaptstress.synthetic import CohortSpec, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_synth():
    spec = CohortSpec(n_participants=4, days_per_participant=(40, 44), seed=3, min_window_span=12)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_cohort(small_synth):
    return preprocess_cohort(small_synth.cohort)[0]


_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.outcome == "failed" or name not in _acceptance:
            _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    from test_acceptance import CRITERIA, DETAILS
    terminalreporter.section("acceptance criteria")
    for name, title in CRITERIA.items():
        outcome = _acceptance.get(name)
        if outcome is None:
            continue
        verdict = "PASS" if outcome == "passed" else "FAIL" if outcome == "failed" else outcome.upper()
        detail = DETAILS.get(name)
        terminalreporter.write_line(f"{verdict}  {title}" + (f"  [{detail}]" if detail else ""))
