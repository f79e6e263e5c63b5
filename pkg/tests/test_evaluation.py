import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import confusion_by_counting, iou_by_counting
from scpseg.evaluation import confusion_matrix, iou, mean_over


def test_identity():
    gt = np.random.default_rng(0).integers(0, 4, (6, 6))
    r = iou(gt, gt, 4)
    assert r.mean_iou == 1.0 and r.pixel_accuracy == 1.0
    assert np.all(r.per_class_iou[r.present] == 1.0)


def test_four_by_four_example():
    gt = np.zeros((4, 4), int)
    gt[:2] = 1
    pred = np.zeros((4, 4), int)
    r = iou(pred, gt, 2)
    assert r.per_class_iou[0] == 0.5
    assert r.per_class_iou[1] == 0.0
    assert r.pixel_accuracy == 0.5
    assert r.mean_iou == 0.25
    assert r.foreground_iou == 0.0


def test_absent_classes_skipped():
    gt = np.array([[0, 1]])
    r = iou(gt, gt, 5)
    assert np.isnan(r.per_class_iou[2:]).all()
    assert r.mean_iou == 1.0
    assert set(r.to_record()["per_class_iou"]) == {"0", "1"}


@pytest.mark.parametrize("seed", range(5))
def test_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 5, (9, 11)), rng.integers(0, 5, (9, 11))
    r = iou(pred, gt, 6)
    assert np.array_equal(r.confusion, confusion_by_counting(pred, gt, 6))
    want = iou_by_counting(pred, gt, 6)
    for got, exp in zip(r.per_class_iou, want):
        assert (np.isnan(got) and np.isnan(exp)) or got == exp
    assert r.pixel_accuracy == (pred == gt).mean()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_confusion_marginals(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 4, (5, 7)), rng.integers(0, 4, (5, 7))
    cm = confusion_matrix(pred, gt, 4)
    assert np.array_equal(cm.sum(axis=1), np.bincount(pred.ravel(), minlength=4))
    assert np.array_equal(cm.sum(axis=0), np.bincount(gt.ravel(), minlength=4))
    r = iou(pred, gt, 4)
    assert r.pixel_accuracy == np.trace(cm) / cm.sum()
    assert ((r.per_class_iou[r.present] >= 0) & (r.per_class_iou[r.present] <= 1)).all()


def test_errors():
    with pytest.raises(ValueError, match="shape"):
        iou(np.zeros((2, 2), int), np.zeros((2, 3), int), 2)
    with pytest.raises(ValueError):
        iou(np.full((2, 2), 3), np.zeros((2, 2), int), 2)
    with pytest.raises(ValueError):
        mean_over([])


def test_aggregate_is_order_independent():
    rng = np.random.default_rng(1)
    rs = [iou(rng.integers(0, 3, (4, 4)), rng.integers(0, 3, (4, 4)), 3) for _ in range(5)]
    assert mean_over(rs) == mean_over(rs[::-1])
