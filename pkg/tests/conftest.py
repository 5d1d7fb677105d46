import numpy as np
import pytest

from ensemble_frontier.predictions import LabelSet, PredictionSet


def random_probs(rng, n, c, concentration=1.0):
    return rng.dirichlet(np.full(c, concentration), size=n)


def random_members(rng, k, n, c, concentration=1.0):
    return [PredictionSet(f"m{i}", random_probs(rng, n, c, concentration)) for i in range(k)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_pair():
    preds = PredictionSet("tiny", np.array([[0.7, 0.3], [0.1, 0.9]]))
    return preds, LabelSet(np.array([0, 1]))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(test_acceptance.RESULTS):
        ok, detail = test_acceptance.RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
