"""Exact-match accuracy and per-instance correctness."""

from __future__ import annotations

import warnings
from typing import Sequence

from ..core import normalize_text
from ..errors import LengthMismatch


def exact_accuracy(predictions: Sequence, labels: Sequence) -> float:
    """Percentage of positions where ``predictions[i] == labels[i]``."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        warnings.warn("exact_accuracy on empty input; returning 0.0", RuntimeWarning, stacklevel=2)
        return 0.0
    hits = sum(1 for p, y in zip(predictions, labels) if p == y)
    return 100.0 * hits / len(labels)


def next_step_correct(prediction, instance) -> bool:
    """A prediction is correct when its next-step text matches the gold step
    (after normalisation) and, if it names a procedure, that procedure is the
    positive one."""
    if prediction is None:
        return False
    if isinstance(prediction, dict):
        text, selected = prediction.get("next_step_text", ""), prediction.get("selected_procedure_id")
    else:
        text, selected = prediction.next_step_text, prediction.selected_procedure_id
    if selected is not None and selected != instance.visual.source_procedure:
        return False
    return normalize_text(text) == normalize_text(instance.gold_next_step)
