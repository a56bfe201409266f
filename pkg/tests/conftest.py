import numpy as np
import pytest

from twotime.hilbert import Operator
from twotime.model import LindbladModel


def random_matrix(rng, d, scale=1.0):
    return scale * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2 * d)


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_model(rng, d=None, channels=None, h_scale=1.0, c_scale=0.7):
    d = int(rng.integers(2, 7)) if d is None else d
    nch = int(rng.integers(1, 4)) if channels is None else channels
    h = random_matrix(rng, d, h_scale)
    h = Operator(0.5 * (h + h.conj().T))
    chans = tuple(Operator(random_matrix(rng, d, c_scale)) for _ in range(nch))
    return LindbladModel(h, chans)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


ACCEPTANCE_CRITERIA = 9


def pytest_terminal_summary(terminalreporter):
    outcome = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            num = int(nodeid.split("test_criterion_")[1].split("_")[0])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            failed = key != "passed" or outcome.get(num, ("PASS",))[0] == "FAIL"
            if rep.when == "call" or failed:
                outcome[num] = ("FAIL" if failed else "PASS", detail or outcome.get(num, ("", ""))[1])
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, ACCEPTANCE_CRITERIA + 1):
        status, detail = outcome.get(num, ("NOT RUN", "deselected (slow criteria need -m slow)"))
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
