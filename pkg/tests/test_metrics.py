import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrcil.metrics import StageReport, confusion_index, run_summary, stage_accuracy, stages_to_csv


def test_accuracy_percent():
    assert stage_accuracy([1, 2, 3, 4], [1, 2, 0, 4]) == 75.0
    with pytest.raises(ValueError):
        stage_accuracy([], [])


def _ci_case():
    # 10 new-task test samples (task 1), 20 old (task 0)
    task_of_class = {0: 0, 1: 0, 2: 1}
    labels = np.array([2] * 10 + [0] * 10 + [1] * 10)
    preds = labels.copy()
    preds[:5] = 0  # new -> old: 5 of N=10
    preds[10:12] = 2  # old -> new: 2 of O=20
    return preds, labels, task_of_class


def test_confusion_index_worked_example():
    preds, labels, tasks = _ci_case()
    ci, m_new, m_old, n_new, n_old = confusion_index(preds, labels, tasks, current_task=1)
    assert (m_new, m_old, n_new, n_old) == (2, 5, 10, 20)
    assert ci == pytest.approx(2 / 20 + 5 / 10)


def test_confusion_index_first_stage_is_zero():
    assert confusion_index([0, 1], [0, 0], {0: 0, 1: 0}, current_task=0)[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_confusion_index_is_bounded(seed):
    rng = np.random.default_rng(seed)
    tasks = {c: c // 3 for c in range(9)}
    labels = rng.integers(0, 9, size=80)
    preds = rng.integers(0, 9, size=80)
    ci = confusion_index(preds, labels, tasks, current_task=2)[0]
    assert 0.0 <= ci <= 2.0


def _stage(t, acc, ci):
    return StageReport(t, acc, {}, ci, 0, 0, 0, 0, footprint_floats=10 * t)


def test_run_summary():
    rep = run_summary([_stage(0, 90.0, 0.0), _stage(1, 80.0, 0.3), _stage(2, 70.0, 0.2)])
    assert rep.avg_accuracy == pytest.approx(80.0)
    assert rep.pd == 20.0
    assert rep.ci_total == pytest.approx(0.5)
    lines = stages_to_csv(rep).splitlines()
    assert lines[0] == "task_id,accuracy,ci,m_new,m_old,footprint_floats"
    assert len(lines) == 4
    with pytest.raises(ValueError):
        run_summary([])


def test_confusion_index_ten_old_twenty_new():
    tasks = {0: 0, 1: 1}
    labels = np.array([0] * 10 + [1] * 20)
    preds = labels.copy()
    preds[:2] = 1  # 2 old -> new
    preds[10:15] = 0  # 5 new -> old
    ci, m_new, m_old, n_new, n_old = confusion_index(preds, labels, tasks, current_task=1)
    assert (m_new, m_old, n_new, n_old) == (2, 5, 20, 10)
    assert ci == pytest.approx(0.45)


def test_confusion_index_extremes():
    tasks = {0: 0, 1: 1}
    labels = np.array([0, 0, 1, 1])
    assert confusion_index(labels, labels, tasks, 1)[0] == 0.0
    assert confusion_index(1 - labels, labels, tasks, 1)[0] == 2.0
