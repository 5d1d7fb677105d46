import numpy as np
import pytest

from ensemble_frontier.aggregation import ensemble_accuracy
from ensemble_frontier.cohort import CohortSpec, calibrate_signal, estimate_single_accuracy, generate_cohort
from ensemble_frontier.errors import ConfigError
from ensemble_frontier.predictions import top1_accuracy

SIGNAL_80_INDEPENDENT = 2.453774221476124  # calibrate_signal(0.8, 10, 0.0, seed=11)


def test_zero_signal_is_chance():
    members, labels = generate_cohort(CohortSpec(10, 50000, 1, 0.0, 0.3, 1.0, seed=4))
    assert 0.094 <= top1_accuracy(members[0], labels) <= 0.106


def test_full_correlation_gives_identical_members():
    members, labels = generate_cohort(CohortSpec(5, 2000, 4, 1.5, 1.0, 0.7, seed=2))
    for m in members[1:]:
        np.testing.assert_array_equal(m.probs, members[0].probs)
    single = top1_accuracy(members[0], labels)
    for n in range(1, 5):
        assert ensemble_accuracy(members[:n], labels) == single


def test_independent_cohort_ensemble_margin():
    members, labels = generate_cohort(CohortSpec(10, 20000, 8, SIGNAL_80_INDEPENDENT, 0.0, 1.0, seed=13))
    singles = [top1_accuracy(m, labels) for m in members]
    assert max(abs(s - 0.8) for s in singles) < 0.01
    assert ensemble_accuracy(members, labels) == 1.0  # seeded regression constant


def test_generation_is_deterministic_and_chunk_invariant():
    spec = CohortSpec(7, 503, 3, 1.2, 0.4, 0.8, seed=99)
    a, la = generate_cohort(spec)
    b, lb = generate_cohort(spec, chunk_size=37)
    c, lc = generate_cohort(spec)
    np.testing.assert_array_equal(la.labels, lb.labels)
    for x, y, z in zip(a, b, c):
        np.testing.assert_array_equal(x.probs, y.probs)
        np.testing.assert_array_equal(x.probs, z.probs)


def test_label_seed_shares_labels_across_families():
    a = generate_cohort(CohortSpec(10, 300, 1, 1.0, 0.3, seed=1, label_seed=5))[1]
    b = generate_cohort(CohortSpec(10, 300, 1, 3.0, 0.7, seed=2, label_seed=5))[1]
    np.testing.assert_array_equal(a.labels, b.labels)


def test_labels_roughly_uniform():
    labels = generate_cohort(CohortSpec(4, 40000, 1, 0.0, seed=3))[1].labels
    counts = np.bincount(labels, minlength=4) / labels.size
    assert np.all(np.abs(counts - 0.25) < 0.01)


@pytest.mark.parametrize("kwargs", [
    dict(num_classes=1), dict(num_examples=0), dict(num_models=0), dict(signal=-1.0),
    dict(correlation=1.5), dict(temperature=0.0), dict(seed=-1),
])
def test_spec_validation(kwargs):
    base = dict(num_classes=3, num_examples=10, num_models=2, signal=1.0)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        CohortSpec(**base)


def test_calibration_examples():
    assert calibrate_signal(0.1, 10, 0.3, 1.0, seed=0) < 0.05
    s90 = calibrate_signal(0.90, 10, 0.3, 1.0, seed=1)
    assert abs(estimate_single_accuracy(s90, 10, 0.3, seed=12345) - 0.90) <= 0.005
    assert calibrate_signal(0.95, 10, 0.3, seed=2) > calibrate_signal(0.80, 10, 0.3, seed=2)


def test_calibration_range_errors():
    with pytest.raises(ConfigError):
        calibrate_signal(0.05, 10)
    with pytest.raises(ConfigError):
        calibrate_signal(0.9995, 10)


def test_single_accuracy_independent_of_correlation():
    s = calibrate_signal(0.85, 10, 0.3, seed=0)
    for seed in range(10):
        a0 = estimate_single_accuracy(s, 10, 0.0, seed=seed)
        a9 = estimate_single_accuracy(s, 10, 0.9, seed=seed)
        assert abs(a0 - a9) < 0.01
