#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Open-set rejection strategies.

A sample with predicted class y_hat is accepted when its score passes the
strategy's test and rejected otherwise; rejected samples get the label
``num_classes`` (the extra "unknown" class). MSP and MLS accept when
score > th. OpenMax recalibrates the logits with per-class Weibull models
of the distance to the class mean activation and accepts when the
outlier probability p_o < th'.
"""

import os
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax
from scipy.stats import weibull_min

from exceptions import ConfigurationError, DegenerateFitError, OpenMaxFitError, UsageError

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_TAIL_SIZE = 20
DEFAULT_ALPHA = 3


class RejectionStrategy(Enum):
    MSP = 'msp'
    MLS = 'mls'
    OPENMAX = 'openmax'

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigurationError(
                f"Unknown rejection strategy {name!r} (expected one of {', '.join(s.value for s in cls)})"
            )


@dataclass(frozen=True)
class OpenSetDecision:
    label: int
    score: float
    strategy: RejectionStrategy
    threshold_used: float
    rejected: bool


@dataclass(frozen=True)
class WeibullModel:
    """Two-parameter Weibull with CDF(x) = 1 - exp(-(x / scale) ** shape)."""
    shape: float
    scale: float

    def cdf(self, x):
        return weibull_min.cdf(x, self.shape, loc=0.0, scale=self.scale)


@dataclass(frozen=True)
class OpenMaxModel:
    """Per-class mean activation vectors and Weibull tail models."""
    mean_activations: np.ndarray
    weibulls: Tuple[WeibullModel, ...]
    tail_size: int
    alpha: int

    @property
    def num_classes(self):
        return len(self.weibulls)

    def to_dict(self):
        return {
            'classes': [
                {
                    'id': c,
                    'mav': [float(v) for v in self.mean_activations[c]],
                    'shape': float(w.shape),
                    'scale': float(w.scale),
                }
                for c, w in enumerate(self.weibulls)
            ],
            'tail_size': int(self.tail_size),
            'alpha': int(self.alpha),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            classes = sorted(data['classes'], key=lambda entry: entry['id'])
            if [entry['id'] for entry in classes] != list(range(len(classes))):
                raise ConfigurationError("OpenMax class ids must be 0..N-1")
            return cls(
                mean_activations=np.array([entry['mav'] for entry in classes], dtype=np.float64),
                weibulls=tuple(WeibullModel(float(e['shape']), float(e['scale'])) for e in classes),
                tail_size=int(data['tail_size']),
                alpha=int(data['alpha']),
            )
        except (KeyError, TypeError) as e:
            raise ConfigurationError(f"Malformed OpenMax model document: {e}") from e


def msp_score(probabilities):
    """Maximum softmax probability; works on a vector or row-wise on a batch."""
    return np.max(np.asarray(probabilities), axis=-1)


def mls_score(logits):
    """Maximum logit score; works on a vector or row-wise on a batch."""
    return np.max(np.asarray(logits), axis=-1)


def decide(score, threshold, predicted, num_classes, strategy=RejectionStrategy.MLS):
    """
    Accept ``predicted`` iff score > threshold; otherwise reject to ``num_classes``.

    Args:
        score (float): MSP or MLS score
        threshold (float): Acceptance threshold th
        predicted (int): Closed-set prediction y_hat in [0, num_classes)
        num_classes (int): N, also the rejection label
        strategy (RejectionStrategy, optional): Recorded in the decision. Defaults to MLS.

    Returns:
        OpenSetDecision: The decision
    """
    rejected = not score > threshold
    return OpenSetDecision(
        label=int(num_classes if rejected else predicted),
        score=float(score),
        strategy=RejectionStrategy.parse(strategy),
        threshold_used=float(threshold),
        rejected=rejected,
    )


def openmax_decide(p_outlier, threshold, predicted, num_classes):
    """Accept ``predicted`` iff p_o < threshold; otherwise reject to ``num_classes``."""
    rejected = not p_outlier < threshold
    return OpenSetDecision(
        label=int(num_classes if rejected else predicted),
        score=float(p_outlier),
        strategy=RejectionStrategy.OPENMAX,
        threshold_used=float(threshold),
        rejected=rejected,
    )


def apply_rejection(strategy, scores, predicted, threshold, num_classes):
    """
    Vectorized decisions over native strategy scores.

    Args:
        strategy (RejectionStrategy): MSP/MLS compare score > th, OpenMax compares p_o < th
        scores (array-like): MSP/MLS scores, or p_o for OpenMax
        predicted (array-like): Closed-set predictions
        threshold (float): Threshold th (or th')
        num_classes (int): Rejection label

    Returns:
        numpy.ndarray: Labels in [0, num_classes]
    """
    strategy = RejectionStrategy.parse(strategy)
    scores = np.asarray(scores)
    accepted = scores < threshold if strategy is RejectionStrategy.OPENMAX else scores > threshold
    return np.where(accepted, np.asarray(predicted), num_classes)


def fit_weibull(tail):
    """
    Maximum-likelihood fit of a two-parameter Weibull (location fixed at 0).

    Args:
        tail (array-like): Positive samples, at least two distinct values

    Returns:
        WeibullModel: Fitted shape and scale

    Raises:
        DegenerateFitError: If the samples cannot support a fit
    """
    tail = np.asarray(tail, dtype=np.float64).ravel()
    if len(np.unique(tail)) < 2:
        raise DegenerateFitError(f"Weibull fit needs at least two distinct samples, got {len(tail)} sample(s) "
                                 f"with {len(np.unique(tail))} distinct value(s)")
    if not np.all(np.isfinite(tail)) or np.any(tail <= 0):
        raise DegenerateFitError("Weibull fit needs finite, strictly positive samples")

    shape, _, scale = weibull_min.fit(tail, floc=0)
    if not (np.isfinite(shape) and np.isfinite(scale) and shape > 0 and scale > 0):
        raise DegenerateFitError(f"Weibull fit diverged (shape={shape}, scale={scale})")
    return WeibullModel(float(shape), float(scale))


def fit_openmax(logits, true_labels, predicted_labels, tail_size=DEFAULT_TAIL_SIZE, alpha=None):
    """
    Fit per-class mean activation vectors and Weibull tails on correctly classified samples.

    Args:
        logits (array-like): Activation vectors, shape (n, N)
        true_labels (array-like): True closed-set labels
        predicted_labels (array-like): Predicted labels
        tail_size (int, optional): Number of largest distances per class (eta). Defaults to 20.
        alpha (int, optional): Number of top-ranked classes to recalibrate. Defaults to min(3, N).

    Returns:
        OpenMaxModel: The fitted model

    Raises:
        OpenMaxFitError: If a class has fewer than ``tail_size`` correct samples
        DegenerateFitError: If a class tail cannot be fitted
    """
    logits = np.asarray(logits, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    num_classes = logits.shape[1]

    if tail_size < 2:
        raise ConfigurationError(f"tail_size must be >= 2, got {tail_size}")
    alpha = min(DEFAULT_ALPHA, num_classes) if alpha is None else int(alpha)
    if not 1 <= alpha <= num_classes:
        raise ConfigurationError(f"alpha must be in [1, {num_classes}], got {alpha}")

    correct = true_labels == predicted_labels
    means, weibulls = [], []
    for c in range(num_classes):
        members = logits[correct & (true_labels == c)]
        if len(members) < tail_size:
            raise OpenMaxFitError(
                f"Class {c} has {len(members)} correctly classified sample(s); tail_size is {tail_size}"
            )
        mean = members.mean(axis=0)
        distances = np.linalg.norm(members - mean, axis=1)
        tail = np.sort(distances)[-tail_size:]
        try:
            weibulls.append(fit_weibull(tail))
        except DegenerateFitError as e:
            raise DegenerateFitError(f"Class {c}: {e}") from e
        means.append(mean)
        logger.debug(f"OpenMax class {c}: {len(members)} samples, shape {weibulls[-1].shape:.3f}, "
                     f"scale {weibulls[-1].scale:.3f}")

    logger.info(f"Fitted OpenMax on {int(correct.sum())} correct activations (tail_size={tail_size}, alpha={alpha})")
    return OpenMaxModel(np.stack(means), tuple(weibulls), int(tail_size), alpha)


def openmax_recalibrate_batch(logits, model):
    """
    Recalibrate a batch of logit vectors.

    Returns:
        tuple: (revised logits of shape (n, N + 1) with the unknown entry last,
            p_o of shape (n,))
    """
    if model is None:
        raise UsageError("OpenMax recalibration requested but no OpenMax model is fitted")
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    n, num_classes = logits.shape
    if num_classes != model.num_classes:
        raise ConfigurationError(f"Logits have {num_classes} classes but the OpenMax model has {model.num_classes}")

    distances = np.linalg.norm(logits[:, None, :] - model.mean_activations[None, :, :], axis=2)
    cdf = np.stack([w.cdf(distances[:, c]) for c, w in enumerate(model.weibulls)], axis=1)

    # Stable sort: equal logits are ranked by class index
    ranking = np.argsort(-logits, axis=1, kind='stable')
    weights = np.ones_like(logits)
    rows = np.arange(n)
    for j in range(model.alpha):
        c = ranking[:, j]
        weights[rows, c] = 1.0 - ((model.alpha - j) / model.alpha) * cdf[rows, c]

    revised = logits * weights
    unknown = np.sum(logits * (1.0 - weights), axis=1)
    revised = np.concatenate([revised, unknown[:, None]], axis=1)
    return revised, softmax(revised, axis=1)[:, -1]


def openmax_recalibrate(logits, model):
    """Single-vector form of openmax_recalibrate_batch: returns (revised, p_o)."""
    revised, p_outlier = openmax_recalibrate_batch(np.asarray(logits)[None, :], model)
    return revised[0], float(p_outlier[0])


def acceptance_scores(strategy, logits, probabilities=None, openmax_model=None):
    """
    Per-sample scores where higher means "more in-set", for ROC analysis.

    OpenMax returns -p_o so every strategy shares the same orientation.
    """
    strategy = RejectionStrategy.parse(strategy)
    logits = np.asarray(logits)
    if strategy is RejectionStrategy.MSP:
        return msp_score(softmax(logits, axis=1) if probabilities is None else probabilities)
    if strategy is RejectionStrategy.MLS:
        return mls_score(logits)
    if openmax_model is None:
        raise UsageError("Strategy 'openmax' requires a fitted OpenMax model")
    return -openmax_recalibrate_batch(logits, openmax_model)[1]


def decisions_for_strategy(strategy, logits, threshold, openmax_model=None):
    """
    Open-set decisions for a batch of logits under one strategy.

    Args:
        strategy (RejectionStrategy): Strategy to apply
        logits (array-like): Logits, shape (n, N)
        threshold (float): th for MSP/MLS, th' on p_o for OpenMax
        openmax_model (OpenMaxModel, optional): Required for OpenMax

    Returns:
        list: OpenSetDecision per sample
    """
    strategy = RejectionStrategy.parse(strategy)
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    num_classes = logits.shape[1]
    predicted = logits.argmax(axis=1)

    if strategy is RejectionStrategy.OPENMAX:
        p_outlier = -acceptance_scores(strategy, logits, openmax_model=openmax_model)
        return [openmax_decide(p, threshold, y, num_classes) for p, y in zip(p_outlier, predicted)]

    scores = acceptance_scores(strategy, logits)
    return [decide(s, threshold, y, num_classes, strategy) for s, y in zip(scores, predicted)]


def save_openmax(model, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"OpenMax model saved to {path}")
    return path


def load_openmax(path):
    with open(path, 'r') as f:
        return OpenMaxModel.from_dict(json.load(f))


def write_activations(path, sample_ids, true_labels, predicted_labels, logits):
    """Write an activation log with columns sample_id,true_label,pred_label,logit_0..logit_{N-1}."""
    logits = np.asarray(logits)
    df = pd.DataFrame({
        'sample_id': list(sample_ids),
        'true_label': np.asarray(true_labels, dtype=int),
        'pred_label': np.asarray(predicted_labels, dtype=int),
    })
    logit_columns = pd.DataFrame(logits, columns=[f'logit_{i}' for i in range(logits.shape[1])])
    df = pd.concat([df, logit_columns], axis=1)
    df.to_csv(path, index=False)
    logger.info(f"Wrote {len(df)} activation rows to {path}")
    return path


def read_activations(path):
    """
    Read an activation log.

    Returns:
        tuple: (sample_ids, true_labels, predicted_labels, logits)
    """
    df = pd.read_csv(path, dtype={'sample_id': str})
    missing = [c for c in ('sample_id', 'true_label', 'pred_label') if c not in df.columns]
    logit_columns = [c for c in df.columns if c.startswith('logit_')]
    expected = [f'logit_{i}' for i in range(len(logit_columns))]
    if missing or not logit_columns or logit_columns != expected:
        raise ConfigurationError(
            f"Activation log {path} must have columns sample_id,true_label,pred_label,logit_0..logit_{{N-1}}"
        )
    return (
        df['sample_id'].tolist(),
        df['true_label'].to_numpy(dtype=int),
        df['pred_label'].to_numpy(dtype=int),
        df[logit_columns].to_numpy(dtype=np.float64),
    )
