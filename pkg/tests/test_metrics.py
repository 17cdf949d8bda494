import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpoxvlm.eval.metrics import (
    UNDEFINED,
    MetricsReport,
    PredictionSet,
    accuracy,
    auroc,
    auroc_pairwise,
    confusion,
    f1,
    format_pm,
    mean_std,
    metric_values,
    precision,
    recall,
)


@st.composite
def prediction_sets(draw, max_n=60):
    n = draw(st.integers(2, max_n))
    labels = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    if all(labels) or not any(labels):
        labels[0] = not labels[0]
    # few distinct score levels so ties are common
    levels = draw(st.integers(1, 6))
    scores = [draw(st.integers(0, levels)) / levels for _ in range(n)]
    preds = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return PredictionSet.build(labels, preds, scores)


@settings(max_examples=200, deadline=None)
@given(prediction_sets())
def test_auroc_matches_pairwise(ps):
    assert abs(auroc(ps) - auroc_pairwise(ps)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(prediction_sets())
def test_auroc_rank_invariant(ps):
    warped = PredictionSet.build(ps.labels, ps.preds, [s ** 3 for s in ps.scores])
    assert auroc(warped) == pytest.approx(auroc(ps), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(prediction_sets())
def test_auroc_flip_symmetry(ps):
    flipped = PredictionSet.build(ps.labels, ps.preds, [1 - s for s in ps.scores])
    assert auroc(flipped) == pytest.approx(1 - auroc(ps), abs=1e-12)


def test_auroc_all_tied_is_half():
    ps = PredictionSet.build([1, 0, 1, 0], [1, 1, 1, 1], [0.3] * 4)
    assert auroc(ps) == 0.5


def test_auroc_perfect_and_reversed():
    ps = PredictionSet.build([1, 1, 0, 0], [1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1])
    assert auroc(ps) == 1.0
    ps = PredictionSet.build([0, 0, 1, 1], [1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1])
    assert auroc(ps) == 0.0


def test_auroc_single_class_raises():
    with pytest.raises(ValueError):
        auroc(PredictionSet.build([1, 1], [1, 0], [0.5, 0.2]))


@settings(max_examples=200, deadline=None)
@given(prediction_sets())
def test_confusion_formulas(ps):
    tp = sum(l and p for l, p in zip(ps.labels, ps.preds))
    fp = sum((not l) and p for l, p in zip(ps.labels, ps.preds))
    tn = sum((not l) and (not p) for l, p in zip(ps.labels, ps.preds))
    fn = sum(l and (not p) for l, p in zip(ps.labels, ps.preds))
    c = confusion(ps)
    assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
    assert accuracy(c) == (tp + tn) / len(ps)
    assert precision(c) == (UNDEFINED if tp + fp == 0 else tp / (tp + fp))
    assert recall(c) == (UNDEFINED if tp + fn == 0 else tp / (tp + fn))


def test_undefined_precision_and_f1():
    ps = PredictionSet.build([1, 0, 0], [0, 0, 0], [0.4, 0.3, 0.2])
    c = confusion(ps)
    assert precision(c) is UNDEFINED
    assert recall(c) == 0.0
    assert f1(c) is UNDEFINED


def test_f1_zero_when_no_true_positive():
    ps = PredictionSet.build([1, 0], [0, 1], [0.4, 0.6])
    assert f1(confusion(ps)) == 0.0


def test_prediction_set_validation():
    with pytest.raises(ValueError):
        PredictionSet.build([1, 0], [1], [0.5, 0.5])
    with pytest.raises(ValueError):
        PredictionSet.build([1, 0], [1, 0], [0.5, 1.5])
    with pytest.raises(ValueError):
        PredictionSet.build([1, 0], [1, 0], [0.5, 0.5], ids=[3, 3])


def test_mean_std_sample_deviation():
    s = mean_std([0.8, 0.9, 1.0])
    assert s["mean"] == pytest.approx(0.9)
    assert s["std"] == pytest.approx(np.std([0.8, 0.9, 1.0], ddof=1))


def test_mean_std_skips_undefined():
    s = mean_std([0.5, UNDEFINED, 0.7])
    assert s["mean"] == pytest.approx(0.6)


def test_format_pm():
    assert format_pm({"mean": 0.9038, "std": 0.0112}) == "90.38±1.12"


def test_report_round_trip():
    ps = PredictionSet.build([1, 0, 1, 0], [1, 0, 0, 0], [0.9, 0.1, 0.4, 0.3])
    report = MetricsReport(config={"row": "full"}, seeds=[1, 2])
    report.per_seed[1] = metric_values(ps)
    report.per_seed[2] = metric_values(ps)
    doc = report.to_json()
    assert doc["summary"]["accuracy"]["mean"] == 0.75
    assert doc["summary"]["auroc"]["std"] == 0.0
    assert not math.isnan(doc["summary"]["f1"]["mean"])
