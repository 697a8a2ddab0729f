"""Linear probe on frozen encodings and macro one-vs-rest AUPRC."""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import average_precision_score, precision_recall_curve

from ..errors import ContractError, EvaluationError
from .encode import EncodedSet

logger = logging.getLogger(__name__)


@dataclass
class ClassifierEval:
    accuracy: float
    auprc: float
    classes: np.ndarray
    predictions: np.ndarray = field(repr=False)
    pr_curves: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)


def auprc(labels, scores, classes=None) -> float:
    """Average precision per class, averaged over classes that have a positive.

    ``scores`` is n×C (one column per entry of ``classes``) or, for two
    classes, a vector of scores for the larger class.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.unique(labels) if classes is None else np.asarray(classes)
    if scores.ndim == 1:
        if classes.size != 2:
            raise ContractError("a score vector only describes a binary problem")
        scores = np.column_stack([-scores, scores])
    if scores.shape != (labels.size, classes.size):
        raise ContractError(f"scores of shape {scores.shape} do not match {labels.size} labels × {classes.size} classes")

    per_class = [
        average_precision_score(labels == c, scores[:, j])
        for j, c in enumerate(classes)
        if np.any(labels == c)
    ]
    if not per_class:
        raise EvaluationError("no class has a positive example")
    return float(np.mean(per_class))


def precision_recall_curves(labels, scores, classes) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels)
    curves = {}
    for j, c in enumerate(classes):
        if np.any(labels == c):
            precision, recall, _ = precision_recall_curve(labels == c, scores[:, j])
            curves[int(c)] = (precision, recall)
    return curves


def linear_probe(train: EncodedSet, test: EncodedSet, seed: int = 42, l2: float = 1e-4) -> ClassifierEval:
    """Multinomial logistic regression with an L2 penalty of ``l2`` on the mean log-loss."""
    if train.labels is None or test.labels is None:
        raise EvaluationError("linear probe needs labelled encodings")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise EvaluationError(f"training set has a single class ({classes[0] if classes.size else 'none'})")
    if len(test) == 0:
        raise EvaluationError("test set is empty")

    probe = LogisticRegression(C=1.0 / (l2 * len(train)), max_iter=5000, random_state=seed)
    probe.fit(train.encodings, train.labels)
    scores = probe.predict_proba(test.encodings)
    predictions = probe.classes_[scores.argmax(axis=1)]

    accuracy = float(np.mean(predictions == test.labels))
    score = auprc(test.labels, scores, probe.classes_)
    logger.info(f"Linear probe: accuracy={accuracy:.4f} auprc={score:.4f} on {len(test)} windows")
    return ClassifierEval(
        accuracy=accuracy,
        auprc=score,
        classes=probe.classes_,
        predictions=predictions,
        pr_curves=precision_recall_curves(test.labels, scores, probe.classes_),
    )
