#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Closed-set and open-set metrics.

Open-set performance is measured by sweeping the acceptance threshold:
in-set (closed test) samples are positives and out-of-set (open test)
samples negatives, with higher scores meaning "more in-set" for every
strategy.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix

from exceptions import ConfigurationError, UsageError
from model import predict
from rejection import RejectionStrategy, acceptance_scores

# Configure logging
logger = logging.getLogger(__name__)

# Full-scale figures (percent) reported for the 256x256 facial-editing corpus.
# Kept as metadata only; they cannot be reproduced on the synthetic sandbox.
REFERENCE_FULL_SCALE = {
    'G0': {'closed_accuracy': 88.99, 'msp': 79.35, 'openmax': 81.83, 'mls': 85.34},
    'G1': {'closed_accuracy': 94.68, 'msp': 79.63, 'openmax': 81.89, 'mls': 91.36},
    'G2': {'closed_accuracy': 87.03, 'msp': 71.49, 'openmax': 81.39, 'mls': 78.34},
    'G3': {'closed_accuracy': 94.34, 'msp': 84.54, 'openmax': 74.86, 'mls': 91.98},
    'G4': {'closed_accuracy': 95.25, 'msp': 83.97, 'openmax': 81.34, 'mls': 89.75},
    'G5': {'closed_accuracy': 92.65, 'msp': 82.29, 'openmax': 78.62, 'mls': 88.05},
    'G6': {'closed_accuracy': 95.51, 'msp': 87.29, 'openmax': 86.20, 'mls': 95.23},
    'G7': {'closed_accuracy': 89.24, 'msp': 75.50, 'openmax': 83.72, 'mls': 82.43},
    'G8': {'closed_accuracy': 94.94, 'msp': 84.49, 'openmax': 85.00, 'mls': 93.13},
    'G9': {'closed_accuracy': 95.94, 'msp': 83.30, 'openmax': 83.73, 'mls': 91.77},
}

# Upper bound of the gain of backbone+ViT+FCN over backbone-only, in points
REFERENCE_ARCHITECTURE_GAIN = {'closed_accuracy': 10.0, 'auc': 9.0}

REFERENCE_NOTE = 'full-scale reference values (percent); not reproducible at sandbox scale'


def reference_metadata(split_name=None):
    """Reference block stored next to measured metrics."""
    metadata = {'note': REFERENCE_NOTE, 'architecture_gain': dict(REFERENCE_ARCHITECTURE_GAIN)}
    if split_name in REFERENCE_FULL_SCALE:
        metadata['split'] = dict(REFERENCE_FULL_SCALE[split_name])
    return metadata


@dataclass
class RocCurve:
    """ROC points ordered by strictly decreasing threshold, from (0, 0) to (1, 1)."""
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


@dataclass
class MetricsReport:
    split_name: str
    closed_accuracy: float
    per_class_accuracy: List[Optional[float]]
    confusion: List[List[int]]
    auc_by_strategy: Dict[str, Optional[float]]
    class_names: List[str] = field(default_factory=list)
    num_closed_test: int = 0
    num_open_test: int = 0
    localization_mse: Optional[float] = None
    reference: dict = field(default_factory=dict)
    roc_curves: Dict[str, RocCurve] = field(default_factory=dict)

    def to_dict(self):
        """JSON-ready form; ROC curves are written separately."""
        return {
            'split_name': self.split_name,
            'closed_accuracy': self.closed_accuracy,
            'per_class_accuracy': self.per_class_accuracy,
            'confusion': self.confusion,
            'auc_by_strategy': self.auc_by_strategy,
            'class_names': self.class_names,
            'num_closed_test': self.num_closed_test,
            'num_open_test': self.num_open_test,
            'localization_mse': self.localization_mse,
            'reference': self.reference,
        }


def _check_scores(scores, name):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ConfigurationError(f"{name} must not be empty")
    return scores


def closed_accuracy(predicted, labels):
    """
    Fraction of exact matches between predictions and labels.

    Raises:
        ConfigurationError: On empty input or a length mismatch
    """
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if len(predicted) != len(labels):
        raise ConfigurationError(f"Length mismatch: {len(predicted)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise ConfigurationError("Accuracy of an empty prediction list is undefined")
    return float(np.mean(predicted == labels))


def confusion(predicted, labels, num_classes):
    """N x N counts; rows are true classes, columns predicted classes."""
    return confusion_matrix(labels, predicted, labels=list(range(num_classes)))


def per_class_accuracy(matrix):
    """Diagonal over row sums; None for classes without samples."""
    matrix = np.asarray(matrix)
    totals = matrix.sum(axis=1)
    return [float(matrix[c, c] / totals[c]) if totals[c] else None for c in range(len(matrix))]


def roc_auc(in_set_scores, out_set_scores):
    """
    ROC curve of accepting in-set samples, with its trapezoidal AUC.

    Thresholds are the distinct scores in decreasing order followed by -inf;
    a sample counts as accepted when its score is strictly greater than the
    threshold.

    Args:
        in_set_scores (array-like): Scores of closed-test samples (positives)
        out_set_scores (array-like): Scores of open-test samples (negatives)

    Returns:
        RocCurve: Thresholds, FPR, TPR and AUC
    """
    in_scores = np.sort(_check_scores(in_set_scores, 'in_set_scores'))
    out_scores = np.sort(_check_scores(out_set_scores, 'out_set_scores'))

    n_in, n_out = len(in_scores), len(out_scores)
    thresholds = np.append(np.unique(np.concatenate([in_scores, out_scores]))[::-1], -np.inf)
    tp = n_in - np.searchsorted(in_scores, thresholds, side='right')
    fp = n_out - np.searchsorted(out_scores, thresholds, side='right')

    # Trapezoids summed on integer counts, divided once
    area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = area / (2 * n_in * n_out)

    return RocCurve(thresholds=thresholds, fpr=fp / n_out, tpr=tp / n_in, auc=float(auc))


def rank_statistic_auc(in_set_scores, out_set_scores):
    """P(s_in > s_out) + 0.5 * P(s_in = s_out), from mid-ranks of the pooled scores."""
    in_scores = _check_scores(in_set_scores, 'in_set_scores')
    out_scores = _check_scores(out_set_scores, 'out_set_scores')
    ranks = rankdata(np.concatenate([in_scores, out_scores]))
    n_in, n_out = len(in_scores), len(out_scores)
    u_statistic = ranks[:n_in].sum() - n_in * (n_in + 1) / 2.0
    return float(u_statistic / (n_in * n_out))


def threshold_at_tpr(in_set_scores, target_tpr):
    """
    Largest threshold th with fraction(in-set scores > th) >= target_tpr.

    Candidates are the observed scores; when none qualifies (target 1.0)
    the threshold is the float just below the minimum score.
    """
    if not 0.0 < target_tpr <= 1.0:
        raise ConfigurationError(f"target_tpr must be in (0, 1], got {target_tpr}")
    scores = np.sort(_check_scores(in_set_scores, 'in_set_scores'))
    candidates = np.unique(scores)
    above = (len(scores) - np.searchsorted(scores, candidates, side='right')) / len(scores)
    qualifying = candidates[above >= target_tpr]
    if qualifying.size:
        return float(qualifying.max())
    return float(np.nextafter(scores[0], -np.inf))


def evaluate_predictions(closed, open_, strategies, openmax_model=None, split_name='', class_names=None,
                         closed_masks=None):
    """
    Build a MetricsReport from inference results.

    Args:
        closed (Predictions): Outputs on the closed test set
        open_ (Predictions): Outputs on the open test set (may be empty)
        strategies (list): RejectionStrategy values to score
        openmax_model (OpenMaxModel, optional): Required when OpenMax is requested
        split_name (str, optional): Split identifier for the report
        class_names (list, optional): In-set class names
        closed_masks (numpy.ndarray, optional): Ground-truth masks of the closed test set,
            used for the localization MSE when the model predicts masks

    Returns:
        MetricsReport: Closed-set metrics and AUC per strategy
    """
    strategies = [RejectionStrategy.parse(s) for s in strategies]
    if RejectionStrategy.OPENMAX in strategies and openmax_model is None:
        raise UsageError("Strategy 'openmax' requested without a fitted OpenMax model")

    num_classes = closed.logits.shape[1]
    predicted = closed.predicted_labels
    matrix = confusion(predicted, closed.labels, num_classes)

    auc_by_strategy, curves = {}, {}
    for strategy in strategies:
        if len(open_.labels) == 0:
            logger.warning(f"Open test set is empty; AUC for '{strategy.value}' is undefined")
            auc_by_strategy[strategy.value] = None
            continue
        in_scores = acceptance_scores(strategy, closed.logits, closed.probabilities, openmax_model)
        out_scores = acceptance_scores(strategy, open_.logits, open_.probabilities, openmax_model)
        curve = roc_auc(in_scores, out_scores)
        curves[strategy.value] = curve
        auc_by_strategy[strategy.value] = curve.auc
        logger.info(f"{split_name or 'split'} {strategy.value.upper()} AUC: {curve.auc:.4f}")

    localization_mse = None
    if closed.predicted_masks is not None and closed_masks is not None and len(closed_masks):
        localization_mse = float(np.mean((closed.predicted_masks - np.asarray(closed_masks)) ** 2))

    accuracy = closed_accuracy(predicted, closed.labels)
    logger.info(f"{split_name or 'split'} closed-set accuracy: {accuracy:.4f}")
    return MetricsReport(
        split_name=split_name,
        closed_accuracy=accuracy,
        per_class_accuracy=per_class_accuracy(matrix),
        confusion=matrix.tolist(),
        auc_by_strategy=auc_by_strategy,
        class_names=list(class_names or []),
        num_closed_test=int(len(closed.labels)),
        num_open_test=int(len(open_.labels)),
        localization_mse=localization_mse,
        reference=reference_metadata(split_name),
        roc_curves=curves,
    )


def evaluate_open_set(model, openmax_model, closed_test, open_test, strategies, split_name='',
                      class_names=None, batch_size=64):
    """
    Evaluate a trained model on a split's closed and open test sets.

    Args:
        model (HybridClassifier): Model trained on the split's in-set classes
        openmax_model (OpenMaxModel): Fitted on closed-train activations, or None
        closed_test (ManipulationDataset): In-set test samples
        open_test (ManipulationDataset): Out-of-set test samples
        strategies (list): Rejection strategies to evaluate
        split_name (str, optional): Split identifier for the report
        class_names (list, optional): In-set class names
        batch_size (int, optional): Inference batch size. Defaults to 64.

    Returns:
        MetricsReport: The metrics
    """
    strategies = [RejectionStrategy.parse(s) for s in strategies]
    if RejectionStrategy.OPENMAX in strategies and openmax_model is None:
        raise UsageError("Strategy 'openmax' requested without a fitted OpenMax model")

    closed = predict(model, closed_test, batch_size)
    open_ = predict(model, open_test, batch_size)
    closed_masks = None
    if closed.predicted_masks is not None and bool(closed_test.has_mask.all()):
        closed_masks = closed_test.masks.numpy()
    return evaluate_predictions(closed, open_, strategies, openmax_model, split_name, class_names, closed_masks)
