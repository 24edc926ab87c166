"""Shared fixtures: tiny model configurations and a small generated sandbox."""

import os
import sys

import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

os.environ.setdefault('OSM_PROGRESS', 'False')

from model import ModelConfig  # noqa: E402
from synthetic import SyntheticGenConfig, generate_synthetic  # noqa: E402


def tiny_model_config(**overrides):
    """32x32 inputs, two stages -> 8x8 feature map."""
    params = dict(
        input_height=32,
        input_width=32,
        num_classes=3,
        backbone_stage_channels=[8, 16],
        patch_size=2,
        embed_dim=16,
        num_blocks=1,
        num_heads=2,
        mlp_ratio=2.0,
        architecture='backbone_vit_fcn',
    )
    params.update(overrides)
    return ModelConfig(**params)


@pytest.fixture
def tiny_config():
    return tiny_model_config()


@pytest.fixture(scope='session')
def small_sandbox(tmp_path_factory):
    """Four classes, 12 samples each (10 train / 2 test), 32x32."""
    out_dir = tmp_path_factory.mktemp('sandbox')
    cfg = SyntheticGenConfig(image_size=32, num_classes=4, samples_per_class=12, train_fraction=0.8, seed=3)
    manifest = generate_synthetic(cfg, str(out_dir))
    return out_dir, manifest
