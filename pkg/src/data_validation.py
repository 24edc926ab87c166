#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Validation of dataset manifests, split configurations and experiment files.

Every validator walks the whole document and returns ``(is_valid, issues)``
so that a user sees all problems in one run. Issue strings start with a
dotted path to the offending entry, e.g. ``samples[3].label_id``.
"""

import os
import logging

from exceptions import ConfigurationError

# Configure logging
logger = logging.getLogger(__name__)

MANIFEST_KEYS = ('version', 'class_names', 'samples')
SAMPLE_KEYS = ('image_path', 'label_id', 'partition')
PARTITIONS = ('train', 'test')
EXPERIMENT_SECTIONS = ('model', 'train', 'split', 'data')


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _resolve(path, base_dir):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def validate_manifest(document, base_dir, require_masks=False, check_files=True):
    """
    Validate a parsed manifest document.

    Args:
        document (dict): Parsed manifest JSON
        base_dir (str): Directory relative paths are resolved against
        require_masks (bool, optional): Whether every sample needs a mask. Defaults to False.
        check_files (bool, optional): Whether referenced files must exist. Defaults to True.

    Returns:
        tuple: (is_valid, issues) where issues lists every violation found
    """
    issues = []

    if not isinstance(document, dict):
        return False, ["manifest: top level must be a JSON object"]

    for key in MANIFEST_KEYS:
        if key not in document:
            issues.append(f"{key}: required field is missing")

    version = document.get('version')
    if 'version' in document and not isinstance(version, str):
        issues.append("version: must be a string")

    class_names = document.get('class_names')
    num_classes = None
    if 'class_names' in document:
        if not isinstance(class_names, list) or not class_names:
            issues.append("class_names: must be a non-empty list")
        else:
            num_classes = len(class_names)
            for i, name in enumerate(class_names):
                if not isinstance(name, str) or not name:
                    issues.append(f"class_names[{i}]: must be a non-empty string")
            if len(set(map(str, class_names))) != len(class_names):
                issues.append("class_names: names must be unique")

    if not isinstance(document.get('metadata', {}), dict):
        issues.append("metadata: must be an object")

    samples = document.get('samples')
    if 'samples' in document and not isinstance(samples, list):
        issues.append("samples: must be a list")
        samples = []

    for i, sample in enumerate(samples or []):
        where = f"samples[{i}]"
        if not isinstance(sample, dict):
            issues.append(f"{where}: must be an object")
            continue

        for key in SAMPLE_KEYS:
            if key not in sample:
                issues.append(f"{where}.{key}: required field is missing")

        label = sample.get('label_id')
        if 'label_id' in sample:
            if not _is_int(label):
                issues.append(f"{where}.label_id: must be an integer")
            elif num_classes is not None and not 0 <= label < num_classes:
                issues.append(f"{where}.label_id: {label} out of range [0, {num_classes})")

        partition = sample.get('partition')
        if 'partition' in sample and partition not in PARTITIONS:
            issues.append(f"{where}.partition: must be one of {', '.join(PARTITIONS)}, got {partition!r}")

        image_path = sample.get('image_path')
        if 'image_path' in sample:
            if not isinstance(image_path, str) or not image_path:
                issues.append(f"{where}.image_path: must be a non-empty string")
            elif check_files and not os.path.isfile(_resolve(image_path, base_dir)):
                issues.append(f"{where}.image_path: file not found ({image_path})")

        mask_path = sample.get('mask_path')
        if mask_path is None:
            if require_masks:
                issues.append(f"{where}.mask_path: required when localization is enabled")
        elif not isinstance(mask_path, str) or not mask_path:
            issues.append(f"{where}.mask_path: must be a non-empty string or null")
        elif check_files and not os.path.isfile(_resolve(mask_path, base_dir)):
            issues.append(f"{where}.mask_path: file not found ({mask_path})")

    return len(issues) == 0, issues


def validate_split(split_config, num_classes):
    """
    Validate an in-set / out-of-set assignment against the number of manifest classes.

    Args:
        split_config (SplitConfig): Split to check
        num_classes (int): Number of classes in the manifest

    Returns:
        tuple: (is_valid, issues)
    """
    issues = []
    in_set = list(split_config.in_set)
    out_of_set = list(split_config.out_of_set)

    if not in_set:
        issues.append("split.in_set: must not be empty")
    for field_name, labels in (('in_set', in_set), ('out_of_set', out_of_set)):
        if len(set(labels)) != len(labels):
            issues.append(f"split.{field_name}: contains duplicate labels")
        for label in labels:
            if not _is_int(label) or not 0 <= label < num_classes:
                issues.append(f"split.{field_name}: class {label!r} is not in the manifest (0..{num_classes - 1})")

    overlap = sorted(set(in_set) & set(out_of_set))
    if overlap:
        issues.append(f"split: classes {overlap} are both in-set and out-of-set")

    return len(issues) == 0, issues


def _section_issues(section, document, factory):
    """Instantiate one config section and turn its failures into prefixed issues."""
    if not isinstance(document, dict):
        return None, [f"{section}: must be an object"]
    try:
        return factory(document), []
    except ConfigurationError as e:
        return None, [f"{section}.{issue}" for issue in (e.issues or [str(e)])]
    except TypeError as e:
        return None, [f"{section}: {e}"]


def validate_experiment_config(document):
    """
    Validate a parsed experiment JSON document.

    Args:
        document (dict): Parsed experiment configuration

    Returns:
        tuple: (is_valid, issues)
    """
    # Imported here: those modules import this one
    from model import ModelConfig
    from training import TrainConfig
    from synthetic import SyntheticGenConfig
    from rejection import RejectionStrategy

    if not isinstance(document, dict):
        return False, ["experiment: top level must be a JSON object"]

    issues = []
    for key in EXPERIMENT_SECTIONS:
        if key not in document:
            issues.append(f"{key}: required section is missing")

    model_config = None
    if 'model' in document:
        model_config, found = _section_issues('model', document['model'], ModelConfig.from_dict)
        issues.extend(found)
    if 'train' in document:
        _, found = _section_issues('train', document['train'], TrainConfig.from_dict)
        issues.extend(found)

    data = document.get('data')
    if 'data' in document:
        if not isinstance(data, dict) or len(set(data) & {'manifest', 'synthetic'}) != 1:
            issues.append("data: must contain exactly one of 'manifest' or 'synthetic'")
        elif 'manifest' in data:
            if not isinstance(data['manifest'], str):
                issues.append("data.manifest: must be a path string")
        else:
            synthetic, found = _section_issues('data.synthetic', data['synthetic'], SyntheticGenConfig.from_dict)
            issues.extend(found)
            if synthetic is not None and model_config is not None:
                size = synthetic.image_size
                if (size, size) != (model_config.input_height, model_config.input_width):
                    issues.append(
                        f"data.synthetic.image_size: {synthetic.image_size} does not match the model input "
                        f"{model_config.input_height}x{model_config.input_width}"
                    )

    split = document.get('split')
    if 'split' in document:
        if isinstance(split, str):
            from dataset import EDITING_SPLIT_NAMES, ATTRIBUTION_SPLIT_NAMES
            if split not in EDITING_SPLIT_NAMES + ATTRIBUTION_SPLIT_NAMES:
                issues.append(f"split: unknown predefined split '{split}'")
        elif isinstance(split, dict) and 'num_in_set' in split:
            if not _is_int(split['num_in_set']) or split['num_in_set'] < 1:
                issues.append("split.num_in_set: must be a positive integer")
            mixed = [key for key in ('in_set', 'out_of_set') if key in split]
            if mixed:
                issues.append(f"split: num_in_set cannot be combined with {' and '.join(mixed)}")
        elif isinstance(split, dict):
            for key in ('in_set', 'out_of_set'):
                if not isinstance(split.get(key), list):
                    issues.append(f"split.{key}: must be a list of class ids or names")
        else:
            issues.append("split: must be a predefined split name or an object")

    strategies = document.get('strategies', [s.value for s in RejectionStrategy])
    if not isinstance(strategies, list) or not strategies:
        issues.append("strategies: must be a non-empty list")
    else:
        known = {s.value for s in RejectionStrategy}
        for i, name in enumerate(strategies):
            if str(name).lower() not in known:
                issues.append(f"strategies[{i}]: unknown strategy {name!r} (expected one of {', '.join(sorted(known))})")

    openmax = document.get('openmax', {})
    if not isinstance(openmax, dict):
        issues.append("openmax: must be an object")
    else:
        tail_size = openmax.get('tail_size', 20)
        if not _is_int(tail_size) or tail_size < 2:
            issues.append("openmax.tail_size: must be an integer >= 2")
        alpha = openmax.get('alpha')
        if alpha is not None and (not _is_int(alpha) or alpha < 1):
            issues.append("openmax.alpha: must be a positive integer")
        elif alpha is not None and model_config is not None and alpha > model_config.num_classes:
            issues.append(f"openmax.alpha: {alpha} exceeds num_classes {model_config.num_classes}")

    if 'output_dir' in document and not isinstance(document['output_dir'], str):
        issues.append("output_dir: must be a path string")

    return len(issues) == 0, issues


def log_validation_result(subject, is_valid, issues):
    """
    Log the outcome of a validation run.

    Args:
        subject (str): What was validated (used in the log message)
        is_valid (bool): Whether validation passed
        issues (list): Issues found
    """
    if is_valid:
        logger.info(f"Validation of {subject} passed")
    else:
        logger.warning(f"Validation of {subject} found {len(issues)} issue(s): {'; '.join(issues)}")
