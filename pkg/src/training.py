#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Training of the hybrid classifier.

Minimizes lambda_cls * CE + lambda_loc * MSE with Adam. The closed-set
training pool is re-split into train/validation subsets (stratified per
class) every ``resplit_interval`` epochs; the weights with the best
validation accuracy are kept alongside the last ones in the checkpoint.
"""

import os
import copy
import json
import logging
from dataclasses import dataclass, asdict, field, fields
from typing import List, Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, Subset
from tqdm import tqdm

from exceptions import CheckpointError, ConfigurationError, NumericError
from logging_setup import SHOW_PROGRESS
from model import HybridClassifier, ModelConfig, predict

# Configure logging
logger = logging.getLogger(__name__)

DEVICE = os.getenv('OSM_DEVICE', 'cpu')

# Floor applied to p_y before the log
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    """Optimization settings."""
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 100
    lambda_cls: float = 1.0
    lambda_loc: float = 1.0
    resplit_interval: int = 10
    val_fraction: float = 400 / 4400
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_batch_size: int = 64

    def __post_init__(self):
        issues = self.validate()
        if issues:
            raise ConfigurationError(f"Invalid training configuration: {'; '.join(issues)}", issues)

    def validate(self):
        issues = []
        if self.learning_rate <= 0:
            issues.append(f"learning_rate: must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            issues.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.eval_batch_size < 1:
            issues.append(f"eval_batch_size: must be >= 1, got {self.eval_batch_size}")
        if self.epochs < 0:
            issues.append(f"epochs: must be >= 0, got {self.epochs}")
        if self.lambda_cls < 0 or self.lambda_loc < 0:
            issues.append("lambda_cls, lambda_loc: loss weights must be non-negative")
        elif self.lambda_cls + self.lambda_loc == 0:
            issues.append("lambda_cls, lambda_loc: at least one loss weight must be positive")
        if self.resplit_interval < 1:
            issues.append(f"resplit_interval: must be >= 1, got {self.resplit_interval}")
        if not 0.0 < self.val_fraction < 1.0:
            issues.append(f"val_fraction: must be in (0, 1), got {self.val_fraction}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            issues.append("beta1, beta2: must be in [0, 1)")
        if self.adam_eps <= 0:
            issues.append("adam_eps: must be positive")
        return issues

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class LossBreakdown:
    """Loss terms of one batch; ``clamped`` tells whether p_y hit the floor."""
    ce: torch.Tensor
    mse: torch.Tensor
    total: torch.Tensor
    clamped: bool = False


def hybrid_loss(probabilities, targets, predicted_mask=None, gt_mask=None, lambda_cls=1.0, lambda_loc=1.0):
    """
    Weighted sum of cross-entropy on class probabilities and mask MSE.

    Args:
        probabilities (torch.Tensor): Softmax outputs, (B, N) or (N,)
        targets (torch.Tensor): Class indices, (B,) or scalar
        predicted_mask (torch.Tensor, optional): Predicted mask, (B, H_f, W_f) or (H_f, W_f)
        gt_mask (torch.Tensor, optional): Ground-truth mask of the same shape; None
            disables the localization term
        lambda_cls (float, optional): Classification weight. Defaults to 1.0.
        lambda_loc (float, optional): Localization weight. Defaults to 1.0.

    Returns:
        LossBreakdown: Batch-mean CE and MSE and their weighted total
    """
    if probabilities.dim() == 1:
        probabilities = probabilities.unsqueeze(0)
        targets = torch.as_tensor(targets).reshape(1)
        if predicted_mask is not None and gt_mask is not None:
            predicted_mask, gt_mask = predicted_mask.unsqueeze(0), gt_mask.unsqueeze(0)

    targets = torch.as_tensor(targets, device=probabilities.device).long()
    p_y = probabilities.gather(1, targets.view(-1, 1)).squeeze(1)
    clamped = bool((p_y < PROB_FLOOR).any())
    if clamped:
        logger.warning(f"Probability of the true class fell below {PROB_FLOOR}; clamped before the log")
    ce = -torch.log(p_y.clamp(min=PROB_FLOOR)).mean()

    if predicted_mask is None or gt_mask is None:
        mse = torch.zeros((), dtype=ce.dtype, device=ce.device)
        total = lambda_cls * ce
    else:
        if predicted_mask.shape != gt_mask.shape:
            raise ConfigurationError(
                f"Mask shape mismatch: predicted {tuple(predicted_mask.shape)} vs ground truth {tuple(gt_mask.shape)}"
            )
        mse = ((gt_mask - predicted_mask) ** 2).flatten(1).mean(dim=1).mean()
        total = lambda_cls * ce + lambda_loc * mse

    return LossBreakdown(ce=ce, mse=mse, total=total, clamped=clamped)


def resplit(labels, val_fraction, seed, epoch_seed=0):
    """
    Stratified train/validation split of the closed-set training pool.

    Each class contributes round(val_fraction * n_c) samples to validation
    (at least one, never all). Classes with fewer than two samples stay in
    training.

    Args:
        labels (array-like): Closed-set labels of the pool
        val_fraction (float): Validation share per class
        seed (int): Base seed
        epoch_seed (int, optional): Index of the resplit round. Defaults to 0.

    Returns:
        tuple: (train_indices, val_indices), sorted numpy arrays
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, epoch_seed])
    train_idx, val_idx = [], []

    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) < 2:
            logger.warning(f"Class {label} has {len(members)} training sample(s); none held out for validation")
            train_idx.append(members)
            continue
        n_val = min(max(int(round(val_fraction * len(members))), 1), len(members) - 1)
        shuffled = rng.permutation(members)
        val_idx.append(shuffled[:n_val])
        train_idx.append(shuffled[n_val:])

    def merge(parts):
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    return merge(train_idx), merge(val_idx)


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume a training run."""
    model_config: dict
    model_state: dict
    optimizer_state: Optional[dict]
    epoch: int
    best_val_accuracy: float
    best_model_state: Optional[dict]
    train_config: dict
    rng_state: dict = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)

    def weights(self, best=True):
        """State dict to evaluate with: the best validation weights when available."""
        if best and self.best_model_state is not None:
            return self.best_model_state
        return self.model_state


def save_checkpoint(checkpoint, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    torch.save({f.name: getattr(checkpoint, f.name) for f in fields(checkpoint)}, path)
    logger.info(f"Checkpoint saved to {path} (epoch {checkpoint.epoch})")
    return path


def load_checkpoint(path):
    """
    Load a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: If the file is missing, truncated or not a checkpoint
    """
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        data = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Checkpoint {path} is corrupt or truncated: {e}") from e

    expected = {f.name for f in fields(Checkpoint)}
    if not isinstance(data, dict) or not expected.issubset(data):
        missing = sorted(expected - set(data)) if isinstance(data, dict) else sorted(expected)
        raise CheckpointError(f"{path} is not a training checkpoint", missing=missing)
    return Checkpoint(**{name: data[name] for name in expected})


def restore_model_state(model, state_dict):
    """
    Load weights into a model, requiring identical parameter names and shapes.

    Raises:
        CheckpointError: Listing missing, unexpected and mis-shaped entries
    """
    own = model.state_dict()
    missing = sorted(set(own) - set(state_dict))
    unexpected = sorted(set(state_dict) - set(own))
    mismatched = [
        f"{k}: {tuple(state_dict[k].shape)} vs {tuple(own[k].shape)}"
        for k in sorted(set(own) & set(state_dict))
        if tuple(state_dict[k].shape) != tuple(own[k].shape)
    ]
    if missing or unexpected or mismatched:
        details = []
        if missing:
            details.append(f"missing keys: {', '.join(missing)}")
        if unexpected:
            details.append(f"unexpected keys: {', '.join(unexpected)}")
        if mismatched:
            details.append(f"shape mismatches: {', '.join(mismatched)}")
        raise CheckpointError(
            f"Checkpoint does not match the model architecture ({'; '.join(details)})",
            missing=missing, unexpected=unexpected,
        )
    model.load_state_dict(state_dict, strict=True)
    return model


def model_from_checkpoint(checkpoint, best=True):
    """Rebuild the model recorded in a checkpoint and load its weights."""
    model = HybridClassifier(ModelConfig.from_dict(checkpoint.model_config))
    restore_model_state(model, checkpoint.weights(best))
    model.eval()
    return model


def _snapshot(model):
    return {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}


def _loader_seed(seed, epoch):
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def validation_accuracy(model, dataset, indices, batch_size):
    if len(indices) == 0:
        return 0.0
    predictions = predict(model, Subset(dataset, indices.tolist()), batch_size)
    return float(np.mean(predictions.predicted_labels == predictions.labels))


def train(model, dataset, cfg, metrics_path=None, resume=None):
    """
    Train a hybrid classifier on the closed-set training pool.

    Args:
        model (HybridClassifier): Freshly built model (or the resumed architecture)
        dataset (ManipulationDataset): Closed-set training pool
        cfg (TrainConfig): Optimization settings
        metrics_path (str, optional): JSON-lines file receiving one record per epoch
        resume (Checkpoint, optional): Checkpoint to continue from

    Returns:
        Checkpoint: Final state, with the best validation weights

    Raises:
        NumericError: If the loss becomes non-finite
    """
    torch.manual_seed(cfg.seed)
    device = torch.device(DEVICE)
    model.to(device)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps
    )

    localization = bool(model.config.localization_enabled)
    if localization and cfg.lambda_loc > 0 and len(dataset) and not bool(dataset.has_mask.all()):
        raise ConfigurationError("Localization is enabled but some training samples have no ground-truth mask")

    start_epoch = 0
    best_accuracy = -1.0
    best_state = None
    history = []
    if resume is not None:
        restore_model_state(model, resume.model_state)
        if resume.optimizer_state is not None:
            optimizer.load_state_dict(resume.optimizer_state)
        start_epoch = resume.epoch
        best_accuracy = resume.best_val_accuracy if resume.best_model_state is not None else -1.0
        best_state = resume.best_model_state
        history = list(resume.history)
        if 'torch' in resume.rng_state:
            torch.set_rng_state(resume.rng_state['torch'])
        logger.info(f"Resuming training at epoch {start_epoch} of {cfg.epochs}")

    labels = dataset.labels.numpy()
    if metrics_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(metrics_path)), exist_ok=True)
        if resume is None and os.path.exists(metrics_path):
            os.remove(metrics_path)

    train_idx = val_idx = None
    epochs = tqdm(range(start_epoch, cfg.epochs), desc='Training', disable=not SHOW_PROGRESS)
    for epoch in epochs:
        if train_idx is None or epoch % cfg.resplit_interval == 0:
            train_idx, val_idx = resplit(labels, cfg.val_fraction, cfg.seed, epoch // cfg.resplit_interval)
            logger.debug(f"Epoch {epoch}: {len(train_idx)} train / {len(val_idx)} validation samples")

        generator = torch.Generator().manual_seed(_loader_seed(cfg.seed, epoch))
        loader = DataLoader(
            Subset(dataset, train_idx.tolist()), batch_size=cfg.batch_size, shuffle=True, generator=generator
        )

        model.train()
        totals = {'loss': 0.0, 'ce': 0.0, 'mse': 0.0}
        seen = 0
        for batch_index, (images, masks, targets) in enumerate(loader):
            images, masks, targets = images.to(device), masks.to(device), targets.to(device)
            output = model(images)
            loss = hybrid_loss(
                output.probabilities, targets,
                output.predicted_mask, masks if localization else None,
                cfg.lambda_cls, cfg.lambda_loc,
            )
            if not torch.isfinite(loss.total):
                raise NumericError(f"Non-finite loss at epoch {epoch + 1}, batch {batch_index}")

            optimizer.zero_grad()
            loss.total.backward()
            optimizer.step()

            n = len(targets)
            seen += n
            totals['loss'] += loss.total.item() * n
            totals['ce'] += loss.ce.item() * n
            totals['mse'] += loss.mse.item() * n

        val_accuracy = validation_accuracy(model, dataset, val_idx, cfg.eval_batch_size)
        if val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_state = _snapshot(model)

        record = {
            'epoch': epoch + 1,
            'train_loss': totals['loss'] / max(seen, 1),
            'train_ce': totals['ce'] / max(seen, 1),
            'train_mse': totals['mse'] / max(seen, 1),
            'val_accuracy': val_accuracy,
        }
        history.append(record)
        if metrics_path is not None:
            with open(metrics_path, 'a') as f:
                f.write(json.dumps(record) + '\n')
        logger.info(
            f"Epoch {epoch + 1}/{cfg.epochs}: loss {record['train_loss']:.4f} "
            f"(ce {record['train_ce']:.4f}, mse {record['train_mse']:.4f}), val acc {val_accuracy:.4f}"
        )

    return Checkpoint(
        model_config=model.config.to_dict(),
        model_state=_snapshot(model),
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        epoch=max(cfg.epochs, start_epoch),
        best_val_accuracy=max(best_accuracy, 0.0),
        best_model_state=best_state,
        train_config=cfg.to_dict(),
        rng_state={'torch': torch.get_rng_state()},
        history=history,
    )
