import numpy as np
import pytest
import scipy.sparse as sp

from influence_select.dataset import Dataset, synth_generate

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}" + (f": {detail}" if detail else ""))


def dense_dataset(rows, labels) -> Dataset:
    return Dataset(sp.csr_matrix(np.asarray(rows, dtype=float)), labels)


@pytest.fixture(scope="session")
def synth_splits():
    """Train / pool / validation drawn from one synthetic distribution."""
    kw = dict(separation=1.0, label_noise=0.1)
    return (synth_generate(200, 20, 1, **kw), synth_generate(50, 20, 2, **kw),
            synth_generate(50, 20, 3, **kw))
