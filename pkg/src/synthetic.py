#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Procedural manipulation sandbox.

Generates a small image-forensics dataset that can be trained on a CPU:
every image is a random smooth background texture around a base colour
shared by the whole dataset, and every class other than 0 ('none') adds a
class-specific tint and grating inside a class-specific region. The region
doubles as the ground-truth mask, so mask geometry correlates with the
edit category the same way face-parsing masks do for real facial edits
(whole face for aging, hair for hairstyle, facial parts for expression,
face and hair for identity).

Each sample has its own RNG stream derived from (seed, sample index), so
the output does not depend on generation order or the number of workers.
"""

import os
import logging
from dataclasses import dataclass, asdict

import numpy as np
from PIL import Image
from scipy.ndimage import zoom
from tqdm import tqdm
from tqdm.contrib.concurrent import thread_map

from dataset import DatasetManifest, ManifestSample, MANIFEST_VERSION, save_manifest
from exceptions import ConfigurationError
from logging_setup import SHOW_PROGRESS

# Configure logging
logger = logging.getLogger(__name__)

REGION_CATEGORIES = ('expression', 'aging', 'hairstyle', 'identity')

# Per-image deviation from the dataset base colour
BASE_JITTER = 0.03
COARSE_TEXTURE_STD = 0.04

# Signed RGB tints: edits shift hue, not only brightness
_TINTS = np.array([
    [1.0, -0.5, -0.5],
    [-0.5, 1.0, -0.5],
    [-0.5, -0.5, 1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [0.6, 0.6, 0.6],
])


@dataclass
class SyntheticGenConfig:
    image_size: int = 64
    num_classes: int = 8
    samples_per_class: int = 100
    texture_noise: float = 0.04
    manipulation_strength: float = 0.5
    seed: int = 0
    train_fraction: float = 0.8
    workers: int = 1

    def __post_init__(self):
        issues = []
        if self.num_classes < 4:
            issues.append(f"num_classes: must be >= 4 so that non-trivial splits exist, got {self.num_classes}")
        if self.manipulation_strength <= 0:
            issues.append("manipulation_strength: must be positive")
        if self.texture_noise < 0:
            issues.append("texture_noise: must be non-negative")
        if self.image_size < 16:
            issues.append(f"image_size: must be >= 16, got {self.image_size}")
        if self.samples_per_class < 1:
            issues.append("samples_per_class: must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            issues.append("train_fraction: must be in (0, 1)")
        if self.workers < 1:
            issues.append("workers: must be >= 1")
        if issues:
            raise ConfigurationError(f"Invalid synthetic configuration: {'; '.join(issues)}", issues)

    def to_dict(self):
        return asdict(self)

    def generation_settings(self):
        """Settings that determine the written files; worker count does not."""
        settings = self.to_dict()
        settings.pop('workers')
        return settings

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def class_category(label):
    """Region category of a class; class 0 has none."""
    return None if label == 0 else REGION_CATEGORIES[(label - 1) % len(REGION_CATEGORIES)]


def class_names(num_classes):
    return ['none'] + [f'edit_{k:02d}_{class_category(k)}' for k in range(1, num_classes)]


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def region_mask(category, size):
    """
    Boolean region for an edit category on a size x size grid.

    Args:
        category (str): One of REGION_CATEGORIES, or None for the 'none' class
        size (int): Image side length

    Returns:
        numpy.ndarray: Boolean mask, True inside the manipulated region
    """
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    face = _ellipse(yy, xx, 0.56, 0.5, 0.30, 0.24)
    hair = _ellipse(yy, xx, 0.45, 0.5, 0.45, 0.40) & ~face & (yy < 0.62)

    if category is None:
        return np.zeros((size, size), dtype=bool)
    if category == 'expression':
        eyes = (yy >= 0.38) & (yy < 0.50) & (xx >= 0.28) & (xx < 0.72)
        mouth = (yy >= 0.66) & (yy < 0.78) & (xx >= 0.36) & (xx < 0.64)
        return eyes | mouth
    if category == 'aging':
        return face
    if category == 'hairstyle':
        return hair
    if category == 'identity':
        return face | hair
    raise ConfigurationError(f"Unknown region category '{category}'")


def dataset_base_colour(seed):
    """RGB base colour shared by every image of a dataset."""
    return np.random.default_rng([seed]).uniform(0.4, 0.6, size=3)


def _background(rng, base, size, texture_noise):
    base = base + rng.uniform(-BASE_JITTER, BASE_JITTER, size=3)
    coarse = rng.normal(0.0, COARSE_TEXTURE_STD, size=(3, 4, 4))
    smooth = zoom(coarse, (1, size / 4.0, size / 4.0), order=1)
    fine = rng.normal(0.0, texture_noise, size=(3, size, size))
    return base[:, None, None] + smooth + fine


def _edit_pattern(label, size, phase_jitter):
    """Class-specific oriented grating, tinted per class."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    frequency = 3.0 + 1.5 * label
    angle = np.pi * label / 7.0
    phase = 0.9 * label + phase_jitter
    wave = np.sin(2.0 * np.pi * frequency * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
    tint = _TINTS[(label - 1) % len(_TINTS)]
    # Tint offset plus grating: the region shifts colour and gains texture
    return 0.5 * tint[:, None, None] * (0.5 + wave[None])


def render_sample(cfg, label, index):
    """
    Render one image and its mask.

    Args:
        cfg (SyntheticGenConfig): Generation settings
        label (int): Class id
        index (int): Global sample index (selects the RNG stream)

    Returns:
        tuple: (uint8 image H x W x 3, uint8 mask H x W with values {0, 255})
    """
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    image = _background(rng, dataset_base_colour(cfg.seed), size, cfg.texture_noise)
    region = region_mask(class_category(label), size)

    if label > 0:
        pattern = _edit_pattern(label, size, rng.uniform(-0.25, 0.25))
        image = image + cfg.manipulation_strength * pattern * region[None]

    image = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
    return (np.round(image * 255.0)).astype(np.uint8), region.astype(np.uint8) * 255


def generate_synthetic(cfg, out_dir):
    """
    Generate the sandbox dataset and its manifest.

    Args:
        cfg (SyntheticGenConfig): Generation settings
        out_dir (str): Output directory (images/, masks/ and manifest.json are written there)

    Returns:
        DatasetManifest: The manifest describing the written files
    """
    image_dir = os.path.join(out_dir, 'images')
    mask_dir = os.path.join(out_dir, 'masks')
    os.makedirs(image_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    n_train = int(round(cfg.train_fraction * cfg.samples_per_class))
    jobs = [
        (label, i, label * cfg.samples_per_class + i)
        for label in range(cfg.num_classes)
        for i in range(cfg.samples_per_class)
    ]

    def write(job):
        label, i, index = job
        image, mask = render_sample(cfg, label, index)
        name = f'c{label:02d}_{i:04d}.png'
        image_path = os.path.join(image_dir, name)
        mask_path = os.path.join(mask_dir, name)
        Image.fromarray(image).save(image_path)
        Image.fromarray(mask).save(mask_path)
        return ManifestSample(
            image_path=os.path.abspath(image_path),
            label_id=label,
            mask_path=os.path.abspath(mask_path),
            partition='train' if i < n_train else 'test',
        )

    logger.info(
        f"Generating {len(jobs)} synthetic images ({cfg.num_classes} classes x {cfg.samples_per_class}) in {out_dir}"
    )
    if cfg.workers > 1:
        samples = thread_map(write, jobs, max_workers=cfg.workers, desc='Generating', disable=not SHOW_PROGRESS)
    else:
        samples = [write(job) for job in tqdm(jobs, desc='Generating', disable=not SHOW_PROGRESS)]

    manifest = DatasetManifest(MANIFEST_VERSION, class_names(cfg.num_classes), list(samples),
                               root=os.path.abspath(out_dir),
                               metadata={'generator': cfg.generation_settings()})
    manifest_path = save_manifest(manifest, os.path.join(out_dir, 'manifest.json'))
    logger.info(f"Manifest written to {manifest_path}")
    return manifest
