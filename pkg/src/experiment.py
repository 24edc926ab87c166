#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Experiment configuration and the pipelines behind the command line.

One JSON document describes an experiment: model, training, split, data
source, rejection strategies and output directory. The pipelines here
generate the sandbox data, train on the split's closed-set training pool,
fit OpenMax on closed-set training activations only and evaluate on the
closed and open test sets.
"""

import os
import json
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Union

import torch
from dotenv import load_dotenv

from data_validation import validate_experiment_config, log_validation_result
from dataset import (
    ManipulationDataset, SplitConfig, get_split, load_manifest, make_split, sandbox_split, split_from_names,
)
from evaluation import evaluate_open_set, reference_metadata
from exceptions import CheckpointError, ConfigurationError, OpenMaxFitError, DegenerateFitError
from generate_report import write_evaluation_artifacts, write_json, write_sweep_artifacts
from model import ModelConfig, build_model, predict
from rejection import (
    DEFAULT_TAIL_SIZE, RejectionStrategy, fit_openmax, save_openmax, write_activations,
)
from synthetic import SyntheticGenConfig, generate_synthetic
from training import TrainConfig, load_checkpoint, restore_model_state, save_checkpoint, train

# Load environment variables
load_dotenv()

# Configure logging
logger = logging.getLogger(__name__)

# Define constants
OUTPUT_DIR = os.getenv('OSM_OUTPUT_DIR', './runs')
CHECKPOINT_FILE = 'checkpoint.pt'
MANIFEST_FILE = 'manifest.json'
METRICS_FILE = 'metrics.jsonl'
MASK_EXAMPLES = 3

SWEEP_AXES = ('patch_size', 'architecture')


@dataclass
class ExperimentConfig:
    model: ModelConfig
    train: TrainConfig
    split: Union[str, dict]
    output_dir: str
    manifest_path: Optional[str] = None
    synthetic: Optional[SyntheticGenConfig] = None
    strategies: List[RejectionStrategy] = field(default_factory=lambda: list(RejectionStrategy))
    tail_size: int = DEFAULT_TAIL_SIZE
    alpha: Optional[int] = None

    def to_dict(self):
        data = {'manifest': self.manifest_path} if self.synthetic is None else {'synthetic': self.synthetic.to_dict()}
        return {
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'split': self.split,
            'data': data,
            'strategies': [s.value for s in self.strategies],
            'openmax': {'tail_size': self.tail_size, 'alpha': self.alpha},
            'output_dir': self.output_dir,
        }


def load_experiment_config(path, seed=None, out=None):
    """
    Load and validate an experiment JSON document.

    Args:
        path (str): Experiment JSON file
        seed (int, optional): Overrides train.seed and the synthetic data seed
        out (str, optional): Overrides output_dir

    Returns:
        ExperimentConfig: The validated configuration

    Raises:
        ConfigurationError: Listing every issue found in the document
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Experiment config {path} is not valid JSON: {e}", [f"experiment: {e}"])

    is_valid, issues = validate_experiment_config(document)
    log_validation_result(f"experiment config {path}", is_valid, issues)
    if not is_valid:
        raise ConfigurationError(f"Invalid experiment config {path}: {'; '.join(issues)}", issues)

    train_config = TrainConfig.from_dict(document['train'])
    if seed is not None:
        train_config = replace(train_config, seed=seed)

    data = document['data']
    manifest_path, synthetic = None, None
    if 'manifest' in data:
        base_dir = os.path.dirname(os.path.abspath(path))
        manifest_path = data['manifest'] if os.path.isabs(data['manifest']) else os.path.join(base_dir, data['manifest'])
    else:
        synthetic = SyntheticGenConfig.from_dict(data['synthetic'])
        if seed is not None:
            synthetic = replace(synthetic, seed=seed)

    openmax = document.get('openmax', {})
    return ExperimentConfig(
        model=ModelConfig.from_dict(document['model']),
        train=train_config,
        split=document['split'],
        output_dir=out or document.get('output_dir') or OUTPUT_DIR,
        manifest_path=manifest_path,
        synthetic=synthetic,
        strategies=[RejectionStrategy.parse(s) for s in document.get('strategies', [s.value for s in RejectionStrategy])],
        tail_size=openmax.get('tail_size', DEFAULT_TAIL_SIZE),
        alpha=openmax.get('alpha'),
    )


def generate_data(config):
    """Generate the synthetic dataset into the output directory; returns the manifest path."""
    if config.synthetic is None:
        raise ConfigurationError("data.synthetic: generate needs a synthetic data section",
                                 ["data.synthetic: required by the generate command"])
    generate_synthetic(config.synthetic, config.output_dir)
    return os.path.join(config.output_dir, MANIFEST_FILE)


def resolve_manifest(config):
    """Manifest path of an experiment, generating sandbox data on first use."""
    if config.manifest_path is not None:
        return config.manifest_path
    path = os.path.join(config.output_dir, MANIFEST_FILE)
    if not os.path.isfile(path):
        logger.info(f"No sandbox data in {config.output_dir}; generating it")
        generate_data(config)
    elif recorded_generator_settings(path) != config.synthetic.generation_settings():
        logger.warning(f"Sandbox data in {config.output_dir} was generated with other settings; regenerating it")
        generate_data(config)
    return path


def recorded_generator_settings(manifest_path):
    """Generator settings stored in a sandbox manifest, or None if it has none."""
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    metadata = document.get('metadata') if isinstance(document, dict) else None
    return metadata.get('generator') if isinstance(metadata, dict) else None


def resolve_split(split, manifest):
    """
    Turn the experiment's split entry into a SplitConfig.

    Accepts a predefined split name, ``{"num_in_set": k}`` for the sandbox
    split, or explicit ``in_set`` / ``out_of_set`` lists of class ids or names.
    """
    if isinstance(split, str):
        return get_split(split, manifest)
    name = split.get('name', 'custom')
    if 'num_in_set' in split:
        if 'in_set' in split or 'out_of_set' in split:
            raise ConfigurationError("split: num_in_set cannot be combined with in_set/out_of_set",
                                     ["split: num_in_set cannot be combined with in_set/out_of_set"])
        return sandbox_split(manifest.num_classes, split['num_in_set'], split.get('name', 'sandbox'))
    in_set, out_of_set = split['in_set'], split['out_of_set']
    if all(isinstance(c, str) for c in in_set + out_of_set):
        return split_from_names(name, in_set, out_of_set, manifest.class_names)
    return SplitConfig(name, list(in_set), list(out_of_set))


def prepare_split(config, require_masks=None):
    """
    Load the manifest, route its samples and check the model's class count.

    Returns:
        OpenSetSplit: The routed split
    """
    if require_masks is None:
        require_masks = bool(config.model.localization_enabled)
    manifest = load_manifest(resolve_manifest(config), require_masks=require_masks)
    split = make_split(manifest, resolve_split(config.split, manifest))
    if split.num_classes != config.model.num_classes:
        raise ConfigurationError(
            f"model.num_classes: {config.model.num_classes} does not match the {split.num_classes} "
            f"in-set classes of split '{split.name}'",
            [f"model.num_classes: expected {split.num_classes} for split '{split.name}'"],
        )
    return split


def check_model_config(checkpoint, model_config):
    """Raise CheckpointError naming every architecture field that differs from the checkpoint."""
    stored = checkpoint.model_config
    current = model_config.to_dict()
    differing = sorted(k for k in set(stored) | set(current) if stored.get(k) != current.get(k))
    if differing:
        details = ', '.join(f"{k}: checkpoint {stored.get(k)!r} vs config {current.get(k)!r}" for k in differing)
        raise CheckpointError(f"Checkpoint was trained with a different model configuration ({details})")


def run_training(config, resume_path=None):
    """
    Train on the split's closed-set training pool and save the checkpoint.

    Returns:
        str: Path to the checkpoint
    """
    split = prepare_split(config)
    train_set = ManipulationDataset.from_samples(
        split.closed_train, config.model, require_masks=bool(config.model.localization_enabled)
    )

    resume = None
    if resume_path is not None:
        resume = load_checkpoint(resume_path)
        check_model_config(resume, config.model)

    model = build_model(config.model, seed=config.train.seed)
    write_json(config.to_dict(), os.path.join(config.output_dir, 'config.json'))
    checkpoint = train(
        model, train_set, config.train,
        metrics_path=os.path.join(config.output_dir, METRICS_FILE), resume=resume,
    )
    return save_checkpoint(checkpoint, os.path.join(config.output_dir, CHECKPOINT_FILE))


def load_trained_model(config, checkpoint_path):
    """Build the configured model and load the best weights of a compatible checkpoint."""
    checkpoint = load_checkpoint(checkpoint_path)
    model = build_model(config.model)
    # Key and shape differences first; then fields that leave the keys unchanged
    restore_model_state(model, checkpoint.weights(best=True))
    check_model_config(checkpoint, config.model)
    model.eval()
    return model


def fit_openmax_on_training(model, train_set, config, output_dir):
    """
    Fit OpenMax on closed-set training activations and log them.

    Returns:
        OpenMaxModel: The fitted model
    """
    predictions = predict(model, train_set, config.train.eval_batch_size)
    write_activations(
        os.path.join(output_dir, 'activations.csv'),
        train_set.sample_ids, predictions.labels, predictions.predicted_labels, predictions.logits,
    )
    openmax_model = fit_openmax(
        predictions.logits, predictions.labels, predictions.predicted_labels,
        tail_size=config.tail_size, alpha=config.alpha,
    )
    save_openmax(openmax_model, os.path.join(output_dir, 'openmax.json'))
    return openmax_model


@torch.no_grad()
def _mask_examples(model, split, closed_test, open_test):
    if not model.config.localization_enabled:
        return None
    picks = [(closed_test, i, s) for i, s in enumerate(split.closed_test[:MASK_EXAMPLES])]
    picks += [(open_test, i, s) for i, s in enumerate(split.open_test[:MASK_EXAMPLES])]
    picks = [(ds, i, s) for ds, i, s in picks if bool(ds.has_mask[i])]
    if not picks:
        return None
    images = torch.stack([ds.images[i] for ds, i, _ in picks])
    output = model(images.to(next(model.parameters()).device))
    return {
        'images': images.numpy(),
        'gt_masks': torch.stack([ds.masks[i] for ds, i, _ in picks]).numpy(),
        'pred_masks': output.predicted_mask.cpu().numpy(),
        'titles': [
            f"{'in' if s.label >= 0 else 'out'}: {os.path.splitext(os.path.basename(s.image_path))[0]}"
            for _, _, s in picks
        ],
    }


def run_evaluation(config, checkpoint_path=None, output_dir=None, make_plots=True, model=None, split=None):
    """
    Evaluate a trained model on its split and write the report artifacts.

    Returns:
        tuple: (MetricsReport, dict of artifact paths)
    """
    output_dir = output_dir or config.output_dir
    if model is None:
        model = load_trained_model(config, checkpoint_path or os.path.join(output_dir, CHECKPOINT_FILE))
    if split is None:
        split = prepare_split(config, require_masks=False)

    closed_test = ManipulationDataset.from_samples(split.closed_test, config.model)
    open_test = ManipulationDataset.from_samples(split.open_test, config.model)

    openmax_model = None
    if RejectionStrategy.OPENMAX in config.strategies:
        train_set = ManipulationDataset.from_samples(split.closed_train, config.model)
        openmax_model = fit_openmax_on_training(model, train_set, config, output_dir)
    else:
        logger.info("OpenMax not requested; skipping the fit")

    report = evaluate_open_set(
        model, openmax_model, closed_test, open_test, config.strategies,
        split_name=split.name, class_names=split.class_names, batch_size=config.train.eval_batch_size,
    )
    mask_examples = _mask_examples(model, split, closed_test, open_test) if make_plots else None
    artifacts = write_evaluation_artifacts(report, output_dir, mask_examples, make_plots=make_plots)
    return report, artifacts


def sweep_variants(config, axis, values=None):
    """
    Model configurations for each sweep value, all validated before any training.

    Raises:
        ConfigurationError: Listing every invalid value
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"Unknown sweep axis '{axis}' (expected one of {', '.join(SWEEP_AXES)})")
    if values is None:
        values = [1, 2, 4] if axis == 'patch_size' else ['backbone', 'backbone_vit', 'backbone_vit_fcn']

    variants, issues = [], []
    for value in values:
        data = config.model.to_dict()
        if axis == 'patch_size':
            try:
                value = int(value)
            except (TypeError, ValueError):
                issues.append(f"patch_size={value!r}: not an integer")
                continue
        else:
            # Derived from the architecture
            data['localization_enabled'] = None
        data[axis] = value
        try:
            variants.append((str(value), ModelConfig.from_dict(data)))
        except ConfigurationError as e:
            issues.extend(f"{axis}={value}: {issue}" for issue in (e.issues or [str(e)]))

    if issues:
        raise ConfigurationError(f"Invalid sweep values: {'; '.join(issues)}", issues)
    return variants


def run_sweep(config, axis, values=None, seeds=None, make_plots=True):
    """
    Train and evaluate every variant along one axis, for each seed.

    Returns:
        dict: Artifact paths of the sweep tables
    """
    variants = sweep_variants(config, axis, values)
    seeds = list(seeds) if seeds else [config.train.seed]
    logger.info(f"Sweep over {axis}: {[name for name, _ in variants]} x seeds {seeds}")

    needs_masks = any(v.localization_enabled for _, v in variants)
    split = prepare_split(config, require_masks=needs_masks)
    train_set = ManipulationDataset.from_samples(split.closed_train, config.model, require_masks=needs_masks)

    rows = []
    for name, model_config in variants:
        for seed in seeds:
            run_dir = os.path.join(config.output_dir, f'{axis}_{name}', f'seed_{seed}')
            run_config = replace(config, model=model_config, train=replace(config.train, seed=seed),
                                 output_dir=run_dir)
            model = build_model(model_config, seed=seed)
            checkpoint = train(model, train_set, run_config.train, metrics_path=os.path.join(run_dir, METRICS_FILE))
            save_checkpoint(checkpoint, os.path.join(run_dir, CHECKPOINT_FILE))
            restore_model_state(model, checkpoint.weights(best=True))

            try:
                report, _ = run_evaluation(run_config, model=model, split=split, make_plots=False)
            except (OpenMaxFitError, DegenerateFitError) as e:
                logger.warning(f"{axis}={name}, seed {seed}: OpenMax fit failed ({e}); evaluating without it")
                fallback = replace(run_config, strategies=[s for s in run_config.strategies
                                                           if s is not RejectionStrategy.OPENMAX])
                report, _ = run_evaluation(fallback, model=model, split=split, make_plots=False)

            row = {'variant': name, 'seed': seed, 'closed_accuracy': report.closed_accuracy}
            for strategy in config.strategies:
                row[f'auc_{strategy.value}'] = report.auc_by_strategy.get(strategy.value)
            final = checkpoint.history[-1] if checkpoint.history else {}
            row['final_train_mse'] = final.get('train_mse') if model_config.localization_enabled else None
            rows.append(row)

    metadata = {
        'split': split.name,
        'values': [name for name, _ in variants],
        'seeds': seeds,
        'reference': reference_metadata(split.name),
    }
    return write_sweep_artifacts(rows, axis, config.output_dir, metadata, make_plots=make_plots)
