"""Stage accuracies, old/new Confusion Index and run summaries."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class StageReport:
    task_id: int
    accuracy: float
    per_class_accuracy: dict[int, float]
    ci: float
    m_new: int
    m_old: int
    n_new: int
    n_old: int
    old_accuracy: float | None = None
    new_accuracy: float | None = None
    mmd_per_old_class: dict[int, float] = field(default_factory=dict)
    footprint_floats: int = 0
    footprint_with_weights: int = 0
    n_classes: int = 0
    components_per_class: dict[int, int] = field(default_factory=dict)


@dataclass
class RunReport:
    stages: list[StageReport]
    avg_accuracy: float
    last_accuracy: float
    pd: float
    ci_total: float

    def to_dict(self) -> dict:
        return asdict(self)


def stage_accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples to score")
    if len(preds) != len(labels):
        raise ValueError("preds and labels differ in length")
    return 100.0 * int((preds == labels).sum()) / len(labels)


def per_class_accuracy(preds, labels) -> dict[int, float]:
    preds, labels = np.asarray(preds), np.asarray(labels)
    return {int(c): stage_accuracy(preds[labels == c], labels[labels == c]) for c in np.unique(labels)}


def confusion_index(preds, labels, task_of_class: dict[int, int], current_task: int | None = None,
                    pooling: str = "all"):
    """Cross-task error rates: ``M_new / O + M_old / N``.

    ``M_new`` counts old-task samples predicted as a current-task class and
    ``M_old`` current-task samples predicted as an old-task class; ``O`` and
    ``N`` are the old and current sample counts. ``pooling="all"`` treats all
    earlier tasks as old, ``"previous"`` only the task right before.
    Returns ``(ci, m_new, m_old, n_new, n_old)``.
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    try:
        true_task = np.array([task_of_class[int(c)] for c in labels], dtype=np.int64)
        pred_task = np.array([task_of_class[int(c)] for c in preds], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"class {exc.args[0]} has no task assignment") from None
    if current_task is None:
        current_task = int(true_task.max()) if len(true_task) else 0
    if pooling == "all":
        is_old = lambda t: t < current_task  # noqa: E731
    elif pooling == "previous":
        is_old = lambda t: t == current_task - 1  # noqa: E731
    else:
        raise ValueError(f"unknown pooling {pooling!r}")
    new_mask = true_task == current_task
    old_mask = is_old(true_task)
    n_new, n_old = int(new_mask.sum()), int(old_mask.sum())
    m_new = int((old_mask & (pred_task == current_task)).sum())
    m_old = int((new_mask & is_old(pred_task)).sum())
    ci = (m_new / n_old if n_old else 0.0) + (m_old / n_new if n_new else 0.0)
    return ci, m_new, m_old, n_new, n_old


def run_summary(stages: list[StageReport]) -> RunReport:
    if not stages:
        raise ValueError("at least one stage is required")
    accs = [s.accuracy for s in stages]
    return RunReport(
        stages=list(stages),
        avg_accuracy=float(np.mean(accs)),
        last_accuracy=accs[-1],
        pd=accs[0] - accs[-1],
        ci_total=float(sum(s.ci for s in stages)),
    )


STAGE_CSV_FIELDS = ("task_id", "accuracy", "ci", "m_new", "m_old", "footprint_floats")


def stages_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STAGE_CSV_FIELDS)
    for s in report.stages:
        writer.writerow(
            [s.task_id, f"{s.accuracy:.2f}", f"{s.ci:.6f}", s.m_new, s.m_old, s.footprint_floats]
        )
    return buf.getvalue()
