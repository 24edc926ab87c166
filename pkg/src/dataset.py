#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Dataset manifests, open-set splits and mask preparation.

A manifest is a JSON file listing every image with its class id, an
optional manipulation mask and a train/test partition. A split assigns
manifest classes to the in-set (closed-set, seen in training) and the
out-of-set (only ever used as unknown test inputs).
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np
import torch
from einops import reduce
from PIL import Image
from torch.utils.data import Dataset
from tqdm import tqdm

from data_validation import validate_manifest, validate_split, log_validation_result
from exceptions import ConfigurationError, ManifestError, SplitError
from logging_setup import SHOW_PROGRESS

# Configure logging
logger = logging.getLogger(__name__)

MANIFEST_VERSION = '1.0'

# Nineteen editing types: reconstruction only, then InterfaceGAN and StyleCLIP edits
EDITING_TYPES = [
    'None', 'Smile', 'Not_smile', 'Old', 'Young', 'Angry', 'Surprised',
    'Afro', 'Purple_hair', 'Curly_hair', 'Mohawk', 'Bobcut', 'Bowlcut',
    'Taylor_swift', 'Beyonce', 'Hilary_clinton', 'Trump', 'Zuckerberg', 'Depp',
]

# Mask category of each editing type (drives which region the ground truth covers)
EDITING_CATEGORIES = {
    'none': [0],
    'expression': [1, 2, 5, 6],
    'aging': [3, 4],
    'hairstyle': [7, 8, 9, 10, 11, 12],
    'identity': [13, 14, 15, 16, 17, 18],
}

# In-set / out-of-set editing types; 'None' is always in-set here
_EDITING_GROUPS = {
    'G0': ([0, 2, 3, 5, 6, 7, 8, 9, 13, 14, 15], [1, 4, 10, 11, 12, 16, 17, 18]),
    'G1': ([0, 1, 2, 5, 6, 13, 14, 15, 16, 17, 18], [4, 3, 7, 8, 9, 10, 11, 12]),
    'G2': ([0, 1, 2, 5, 6, 7, 8, 9, 10, 11, 12], [4, 3, 13, 14, 15, 16, 17, 18]),
    'G3': ([0, 1, 2, 3, 4, 11, 12, 13, 14, 15, 18], [5, 6, 7, 8, 9, 10, 16, 17]),
    'G4': ([0, 1, 3, 4, 6, 10, 12, 15, 16, 17, 18], [2, 5, 7, 8, 9, 11, 13, 14]),
}

GAN_ARCHITECTURES = ['LSGM', 'StyleGAN2', 'StyleGAN3', 'Taming_transformer', 'Latent_diffusion']

_ATTRIBUTION_GROUPS = {
    'S1': (['LSGM', 'StyleGAN2', 'Taming_transformer'], ['StyleGAN3', 'Latent_diffusion']),
    'S2': (['StyleGAN2', 'StyleGAN3', 'Latent_diffusion'], ['LSGM', 'Taming_transformer']),
    'S3': (['LSGM', 'StyleGAN2', 'StyleGAN3'], ['Taming_transformer', 'Latent_diffusion']),
    'S4': (['LSGM', 'StyleGAN2', 'Latent_diffusion'], ['StyleGAN3', 'Taming_transformer']),
}

EDITING_SPLIT_NAMES = [f'G{i}' for i in range(10)]
ATTRIBUTION_SPLIT_NAMES = sorted(_ATTRIBUTION_GROUPS)


@dataclass(frozen=True)
class ManifestSample:
    """One manifest entry; paths are absolute once loaded."""
    image_path: str
    label_id: int
    mask_path: Optional[str]
    partition: str


@dataclass
class DatasetManifest:
    version: str
    class_names: List[str]
    samples: List[ManifestSample]
    root: Optional[str] = field(default=None, compare=False)
    # Free-form provenance, e.g. the settings of the generator that wrote the files
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def num_classes(self):
        return len(self.class_names)

    def to_dict(self, relative_to=None):
        """Serialize to the manifest JSON schema, optionally with paths relative to a directory."""
        def rel(path):
            if path is None or relative_to is None:
                return path
            return os.path.relpath(path, relative_to).replace(os.sep, '/')

        return {
            'version': self.version,
            'class_names': list(self.class_names),
            'samples': [
                {
                    'image_path': rel(s.image_path),
                    'label_id': s.label_id,
                    'mask_path': rel(s.mask_path),
                    'partition': s.partition,
                }
                for s in self.samples
            ],
            **({'metadata': dict(self.metadata)} if self.metadata else {}),
        }


@dataclass
class SplitConfig:
    """In-set / out-of-set assignment of manifest class ids."""
    name: str
    in_set: List[int]
    out_of_set: List[int]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SplitSample:
    """A sample routed into a split; ``label`` is the remapped closed-set id or -1 for out-of-set."""
    sample_id: str
    image_path: str
    mask_path: Optional[str]
    label: int
    original_label: int


@dataclass
class OpenSetSplit:
    name: str
    closed_train: List[SplitSample]
    closed_test: List[SplitSample]
    open_test: List[SplitSample]
    label_map: Dict[int, int]
    class_names: List[str]

    @property
    def num_classes(self):
        return len(self.label_map)


def load_manifest(path, require_masks=False):
    """
    Load and validate a dataset manifest.

    Args:
        path (str): Path to the manifest JSON file
        require_masks (bool, optional): Require a mask for every sample. Defaults to False.

    Returns:
        DatasetManifest: The validated manifest with absolute paths
    """
    if not os.path.isfile(path):
        raise ManifestError(f"Manifest not found: {path}", [f"manifest: file not found ({path})"])

    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ManifestError(f"Manifest {path} is not valid JSON: {e}", [f"manifest: {e}"])

    base_dir = os.path.dirname(os.path.abspath(path))
    is_valid, issues = validate_manifest(document, base_dir, require_masks=require_masks)
    log_validation_result(f"manifest {path}", is_valid, issues)
    if not is_valid:
        raise ManifestError(f"Manifest {path} failed validation: {'; '.join(issues)}", issues)

    def absolute(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

    samples = [
        ManifestSample(
            image_path=absolute(s['image_path']),
            label_id=s['label_id'],
            mask_path=absolute(s.get('mask_path')),
            partition=s['partition'],
        )
        for s in document['samples']
    ]
    logger.info(f"Loaded manifest with {len(document['class_names'])} classes and {len(samples)} samples")
    return DatasetManifest(document['version'], list(document['class_names']), samples, root=base_dir,
                           metadata=dict(document.get('metadata', {})))


def save_manifest(manifest, path):
    """
    Write a manifest as UTF-8 JSON with paths relative to its directory.

    Returns:
        str: The path written
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(relative_to=directory), f, indent=2)
        f.write('\n')
    return path


def editing_split(name):
    """
    Return one of the G0-G9 editing-type splits (class ids are T0..T18).

    G5-G9 are G0-G4 with the first in-set and first out-of-set types swapped,
    which moves 'None' to the out-of-set.
    """
    if name not in EDITING_SPLIT_NAMES:
        raise SplitError(f"Unknown editing split '{name}' (expected one of {', '.join(EDITING_SPLIT_NAMES)})")
    index = int(name[1:])
    in_set, out_of_set = (list(x) for x in _EDITING_GROUPS[f'G{index % 5}'])
    if index >= 5:
        in_set[0], out_of_set[0] = out_of_set[0], in_set[0]
    return SplitConfig(name, sorted(in_set), sorted(out_of_set))


def split_from_names(name, in_names, out_names, class_names):
    """Build a SplitConfig from class names, resolving them against the manifest class list."""
    lookup = {c.lower(): i for i, c in enumerate(class_names)}
    missing = [n for n in list(in_names) + list(out_names) if n.lower() not in lookup]
    if missing:
        raise SplitError(f"Split '{name}' references classes not in the manifest: {', '.join(missing)}")
    return SplitConfig(
        name,
        sorted(lookup[n.lower()] for n in in_names),
        sorted(lookup[n.lower()] for n in out_names),
    )


def attribution_split(name, class_names):
    """Return one of the S1-S4 GAN-attribution splits resolved against manifest class names."""
    if name not in _ATTRIBUTION_GROUPS:
        raise SplitError(f"Unknown attribution split '{name}' (expected one of {', '.join(ATTRIBUTION_SPLIT_NAMES)})")
    in_names, out_names = _ATTRIBUTION_GROUPS[name]
    return split_from_names(name, in_names, out_names, class_names)


def get_split(name, manifest=None):
    """Look up a predefined split by name (G0-G9 or S1-S4)."""
    if name in EDITING_SPLIT_NAMES:
        return editing_split(name)
    if name in _ATTRIBUTION_GROUPS:
        if manifest is None:
            raise SplitError(f"Split '{name}' needs a manifest to resolve class names")
        return attribution_split(name, manifest.class_names)
    raise SplitError(f"Unknown split '{name}'")


def sandbox_split(num_classes, num_in_set, name='sandbox'):
    """First ``num_in_set`` classes in-set (class 0 'none' included), the rest out-of-set."""
    if not 1 <= num_in_set <= num_classes:
        raise SplitError(f"num_in_set must be in [1, {num_classes}], got {num_in_set}")
    return SplitConfig(name, list(range(num_in_set)), list(range(num_in_set, num_classes)))


def make_split(manifest, split_config):
    """
    Route manifest samples into closed-set train/test and out-of-set test lists.

    In-set labels are remapped to 0..N-1 preserving the order of the original
    ids. Out-of-set classes are only taken from the test partition, so they
    never reach training.

    Args:
        manifest (DatasetManifest): Loaded manifest
        split_config (SplitConfig): In-set / out-of-set assignment

    Returns:
        OpenSetSplit: The routed samples and label mapping
    """
    is_valid, issues = validate_split(split_config, manifest.num_classes)
    if not is_valid:
        raise SplitError(f"Split '{split_config.name}' is invalid: {'; '.join(issues)}")

    label_map = {original: new for new, original in enumerate(sorted(split_config.in_set))}
    out_of_set = set(split_config.out_of_set)

    closed_train, closed_test, open_test = [], [], []
    for s in manifest.samples:
        if s.label_id in label_map:
            routed = SplitSample(s.image_path, s.image_path, s.mask_path, label_map[s.label_id], s.label_id)
            (closed_train if s.partition == 'train' else closed_test).append(routed)
        elif s.label_id in out_of_set and s.partition == 'test':
            open_test.append(SplitSample(s.image_path, s.image_path, s.mask_path, -1, s.label_id))

    if not open_test:
        logger.warning(f"Split '{split_config.name}' has an empty out-of-set test list; open-set AUC is undefined")
    if not closed_train:
        logger.warning(f"Split '{split_config.name}' has no closed-set training samples")

    logger.info(
        f"Split '{split_config.name}': {len(label_map)} in-set classes, {len(out_of_set)} out-of-set classes, "
        f"{len(closed_train)} train / {len(closed_test)} closed test / {len(open_test)} open test samples"
    )
    return OpenSetSplit(
        name=split_config.name,
        closed_train=closed_train,
        closed_test=closed_test,
        open_test=open_test,
        label_map=label_map,
        class_names=[manifest.class_names[i] for i in sorted(label_map)],
    )


def prepare_mask(mask, feature_height, feature_width):
    """
    Area-average a binary ground-truth mask down to feature resolution.

    Args:
        mask (numpy.ndarray): H x W mask with values in {0, 1}
        feature_height (int): Target height H_f (must divide H)
        feature_width (int): Target width W_f (must divide W)

    Returns:
        numpy.ndarray: H_f x W_f float32 mask with values in [0, 1]
    """
    mask = np.asarray(mask, dtype=np.float64)
    height, width = mask.shape
    if height % feature_height or width % feature_width:
        raise ConfigurationError(
            f"Mask of size {height}x{width} cannot be pooled to {feature_height}x{feature_width}"
        )
    pooled = reduce(mask, '(h p1) (w p2) -> h w', 'mean', h=feature_height, w=feature_width)
    return pooled.astype(np.float32)


def read_image(path, height, width):
    """Read an RGB image as a float32 (3, H, W) array in [0, 1], resizing if needed."""
    with Image.open(path) as img:
        img = img.convert('RGB')
        if img.size != (width, height):
            img = img.resize((width, height), Image.BILINEAR)
        array = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def read_mask(path, height, width):
    """Read a single-channel mask as an H x W array in {0, 1} (pixel > 127 means manipulated)."""
    with Image.open(path) as img:
        img = img.convert('L')
        if img.size != (width, height):
            img = img.resize((width, height), Image.NEAREST)
        return (np.asarray(img) > 127).astype(np.float32)


class ManipulationDataset(Dataset):
    """
    In-memory dataset of images, closed-set labels and feature-resolution masks.

    Items are ``(image, mask, label)``; samples without a ground-truth mask get
    an all-zero mask and ``has_mask`` False.
    """

    def __init__(self, images, labels, masks=None, has_mask=None, sample_ids=None):
        self.images = images
        self.labels = torch.as_tensor(labels, dtype=torch.long)
        n = len(self.labels)
        if has_mask is None:
            has_mask = [masks is not None] * n
        self.masks = masks if masks is not None else torch.zeros(n, 1, 1)
        self.has_mask = torch.as_tensor(has_mask, dtype=torch.bool)
        self.sample_ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(n)]

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, index):
        return self.images[index], self.masks[index], self.labels[index]

    @classmethod
    def from_samples(cls, samples, model_config, require_masks=False):
        """
        Load split samples from disk.

        Args:
            samples (list): SplitSample entries
            model_config (ModelConfig): Provides input and feature-map sizes
            require_masks (bool, optional): Raise if a sample has no mask. Defaults to False.

        Returns:
            ManipulationDataset: Loaded dataset
        """
        h, w = model_config.input_height, model_config.input_width
        hf, wf = model_config.feature_height, model_config.feature_width
        n = len(samples)
        images = torch.zeros(n, model_config.input_channels, h, w)
        masks = torch.zeros(n, hf, wf)
        has_mask = []

        for i, sample in enumerate(tqdm(samples, desc='Loading images', disable=not SHOW_PROGRESS or n == 0)):
            images[i] = torch.from_numpy(read_image(sample.image_path, h, w))
            if sample.mask_path is not None:
                masks[i] = torch.from_numpy(prepare_mask(read_mask(sample.mask_path, h, w), hf, wf))
                has_mask.append(True)
            elif require_masks:
                raise ManifestError(f"Sample {sample.sample_id} has no mask but localization is enabled")
            else:
                has_mask.append(False)

        return cls(images, [s.label for s in samples], masks, has_mask, [s.sample_id for s in samples])
