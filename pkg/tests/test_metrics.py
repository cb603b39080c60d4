import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasten import metrics, nn
from fasten.data import Samples


def pairwise_auroc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def lookup_model(n_classes, dim):
    """Extractor-free model whose clean head returns softmax(100 * x) on one-hot-ish inputs."""
    return nn.ModelParams(nn.FeatureExtractorParams([], [], []),
                          nn.HeadParams(100.0 * np.eye(dim, n_classes), np.zeros(n_classes)),
                          nn.HeadParams(np.zeros((dim, n_classes)), np.zeros(n_classes)))


def samples_from(x, y_true, y_star=None):
    y_true = np.asarray(y_true)
    y_star = y_true.copy() if y_star is None else np.asarray(y_star)
    return Samples(np.asarray(x, float), y_true, y_star, y_star.copy(), np.arange(len(y_true)))


def test_accuracy_perfect_and_constant():
    y = np.array([0, 1, 2, 0, 1, 2])
    m = lookup_model(3, 3)
    assert metrics.test_accuracy(m, samples_from(np.eye(3)[y], y)) == 1.0
    const = samples_from(np.zeros((6, 3)) + np.array([1.0, 0, 0]), y)
    assert metrics.test_accuracy(m, const) == pytest.approx(1 / 3)


def test_accuracy_hand_built_three_samples():
    # predictions 0, 1, 1 against truths 0, 1, 2
    s = samples_from(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]]), [0, 1, 2])
    assert metrics.test_accuracy(lookup_model(3, 3), s) == pytest.approx(2 / 3)


def test_accuracy_ties_go_to_lowest_index():
    s = samples_from(np.array([[0.0, 1.0, 1.0]]), [1])
    assert metrics.test_accuracy(lookup_model(3, 3), s) == 1.0


def test_accuracy_empty_set():
    with pytest.raises(ValueError):
        metrics.test_accuracy(lookup_model(2, 2), samples_from(np.zeros((0, 2)), []))


def test_recovery_perfect_model():
    y = np.array([0, 1, 2, 2, 1])
    s = samples_from(np.eye(3)[y], y, y_star=[1, 1, 2, 0, 1])
    r = metrics.recovery_report(lookup_model(3, 3), s)
    assert r.overall_accuracy == 1.0 and r.incorrect_accuracy == 1.0
    assert r.overall_nll < 1e-12 and r.incorrect_nll < 1e-12
    assert r.n_incorrect == 2


def test_recovery_memorized_noisy_labels():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 4, 2000)
    y_star = np.where(rng.random(2000) < 0.3, (y + 1) % 4, y)
    # the model reproduces y_star exactly
    s = samples_from(np.eye(4)[y_star], y, y_star)
    r = metrics.recovery_report(lookup_model(4, 4), s)
    noise = np.mean(y_star != y)
    assert r.overall_accuracy == pytest.approx(1 - noise)
    assert r.incorrect_accuracy == 0.0


def test_recovery_without_mislabeled_samples_flags_absent():
    y = np.array([0, 1, 1])
    r = metrics.recovery_report(lookup_model(2, 2), samples_from(np.eye(2)[y], y))
    assert r.incorrect_accuracy is None and r.incorrect_nll is None


def test_recovery_streaming_matches_batch_bitwise():
    rng = np.random.default_rng(1)
    p = nn.init_params(5, 3, (8,), seed=1)
    y = rng.integers(0, 3, 503)
    s = samples_from(rng.normal(size=(503, 5)), y, np.where(rng.random(503) < 0.4, (y + 2) % 3, y))
    whole = metrics.recovery_report(p, s)
    for chunk in (1, 7, 64, 1000):
        assert metrics.recovery_report(p, s, chunk_size=chunk) == whole


def test_auroc_perfect_separation():
    assert metrics.auroc([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 1.0
    assert metrics.auroc([0.1, 0.2, 0.9, 0.8], [True, True, False, False]) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=200))
def test_auroc_equals_pairwise_definition(rows):
    scores = [s / 6 for s, _ in rows]
    pos = [p for _, p in rows]
    if all(pos) or not any(pos):
        return
    assert metrics.auroc(scores, pos) == pairwise_auroc(scores, pos)


def test_auroc_random_scores_near_half():
    rng = np.random.default_rng(2)
    n = 1000
    pos = rng.random(n) < 0.4
    n_pos, n_neg = pos.sum(), n - pos.sum()
    # null variance of the Mann-Whitney statistic
    sd = math.sqrt((n_pos + n_neg + 1) / (12 * n_pos * n_neg))
    assert abs(metrics.auroc(rng.random(n), pos) - 0.5) <= 3 * sd


def test_auprc_random_scorer_is_prevalence():
    rng = np.random.default_rng(3)
    n = 1000
    pos = rng.random(n) < 0.72
    # spread of AUPRC for a random scorer, from a permutation simulation
    sims = [metrics.auprc(rng.random(n), pos) for _ in range(300)]
    sd = np.std(sims)
    assert abs(metrics.auprc(rng.random(n), pos) - pos.mean()) <= 3 * sd + 0.005
    assert abs(np.mean(sims) - pos.mean()) < 0.01


def test_auprc_perfect_and_tied():
    assert metrics.auprc([0.9, 0.8, 0.1], [True, True, False]) == 1.0
    # all scores tied: a single threshold at prevalence precision
    assert metrics.auprc([0.5] * 4, [True, False, False, True]) == 0.5


def test_detection_report_on_separating_model():
    y = np.array([0, 1, 0, 1, 0, 1])
    y_star = np.array([0, 0, 0, 1, 1, 1])
    s = samples_from(np.eye(2)[y], y, y_star)
    rep = metrics.detection_report(lookup_model(2, 2), s)
    assert rep.auroc == 1.0 and rep.auprc == 1.0
    assert rep.prevalence == pytest.approx(2 / 6)


def test_detection_report_degenerate():
    y = np.array([0, 1])
    with pytest.raises(ValueError):
        metrics.detection_report(lookup_model(2, 2), samples_from(np.eye(2)[y], y))


def test_detection_curve_csv_header():
    text = metrics.detection_curve_csv([0.3, 0.2, 0.9], [False, True, True])
    lines = text.splitlines()
    assert lines[0] == "threshold,tpr,fpr,precision,recall"
    assert len(lines) == 4


def test_confidence_interval():
    m, h = metrics.confidence_interval([0.7, 0.7, 0.7])
    assert m == pytest.approx(0.7) and h == pytest.approx(0.0, abs=1e-12)
    mean, half = metrics.confidence_interval([0.0, 1.0])
    assert mean == 0.5
    assert half == pytest.approx(1.96 * math.sqrt(0.5) / math.sqrt(2), abs=1e-3)
    assert half == pytest.approx(0.980, abs=1e-3)
    with pytest.raises(ValueError):
        metrics.confidence_interval([1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=20), st.floats(-10, 10))
def test_confidence_interval_scale_equivariance(values, c):
    m, h = metrics.confidence_interval(values)
    m2, h2 = metrics.confidence_interval([c * v for v in values])
    assert m2 == pytest.approx(c * m, abs=1e-9)
    assert h2 == pytest.approx(abs(c) * h, abs=1e-9)
