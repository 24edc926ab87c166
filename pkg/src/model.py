#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Hybrid classification network for synthetic manipulation types.

A stride-1 residual backbone extracts a shared feature map f_r. The
classification branch cuts f_r into P x P patches, projects them to the
transformer width, prepends a class token, adds position embeddings and
runs a pre-LN transformer encoder; a linear head reads the class-token
row. The localization branch is a small FCN predicting the manipulated
region mask at feature resolution from the same f_r.

Tensors are channels-first (B, D_f, H_f, W_f) as usual in torch; patch
rows are still flattened in (row, column, channel) order.
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import List, Optional

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange
from torch.utils.data import DataLoader

from exceptions import ConfigurationError, NumericError, UsageError

# Configure logging
logger = logging.getLogger(__name__)

ARCHITECTURES = ('backbone', 'backbone_vit', 'backbone_vit_fcn')

# Position embeddings and class token start from N(0, 0.02^2)
EMBED_INIT_STD = 0.02

# Keeps mask entries strictly inside (0, 1) in float32
MASK_EPS = 1e-6

# Batch norm in training mode needs more than one value per channel, even at batch size 1
MIN_FEATURE_SIZE = 2


@dataclass
class ModelConfig:
    """Architecture hyperparameters of the hybrid classifier."""
    input_height: int = 256
    input_width: int = 256
    input_channels: int = 3
    num_classes: int = 11
    backbone_stage_channels: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
    blocks_per_stage: int = 1
    feature_height: Optional[int] = None
    feature_width: Optional[int] = None
    feature_channels: Optional[int] = None
    patch_size: int = 1
    embed_dim: int = 256
    num_blocks: int = 4
    num_heads: int = 8
    mlp_ratio: float = 4.0
    architecture: str = 'backbone_vit_fcn'
    localization_enabled: Optional[bool] = None
    localization_channels: Optional[int] = None

    def __post_init__(self):
        self.backbone_stage_channels = [int(c) for c in self.backbone_stage_channels]
        issues = self.validate()
        if issues:
            raise ConfigurationError(f"Invalid model configuration: {'; '.join(issues)}", issues)

    @property
    def uses_transformer(self):
        return self.architecture in ('backbone_vit', 'backbone_vit_fcn')

    @property
    def num_patches(self):
        return (self.feature_height * self.feature_width) // (self.patch_size ** 2)

    def validate(self):
        """
        Derive the feature-map geometry and collect every inconsistency.

        Returns:
            list: Issue strings, each prefixed with the offending field name
        """
        issues = []

        if self.architecture not in ARCHITECTURES:
            issues.append(f"architecture: must be one of {', '.join(ARCHITECTURES)}, got '{self.architecture}'")
            return issues

        stages = len(self.backbone_stage_channels)
        if stages < 1:
            issues.append("backbone_stage_channels: at least one stage is required")
            return issues
        if any(c < 1 for c in self.backbone_stage_channels):
            issues.append("backbone_stage_channels: channel counts must be positive")
        if self.blocks_per_stage < 1:
            issues.append("blocks_per_stage: must be >= 1")
        if self.input_channels < 1:
            issues.append("input_channels: must be >= 1")
        if self.num_classes < 2:
            issues.append(f"num_classes: must be >= 2, got {self.num_classes}")

        reduction = 2 ** stages
        for name, size in (('input_height', self.input_height), ('input_width', self.input_width)):
            if size < reduction or size % reduction != 0:
                issues.append(f"{name}: {size} is not divisible by the backbone reduction {reduction}")
            elif size // reduction < MIN_FEATURE_SIZE:
                issues.append(
                    f"{name}: {size} gives a feature map of {size // reduction} pixel(s) along this axis; "
                    f"at least {MIN_FEATURE_SIZE} are needed (input >= {MIN_FEATURE_SIZE * reduction})"
                )

        derived = {
            'feature_height': self.input_height // reduction,
            'feature_width': self.input_width // reduction,
            'feature_channels': self.backbone_stage_channels[-1],
        }
        for name, value in derived.items():
            given = getattr(self, name)
            if given is None:
                setattr(self, name, value)
            elif given != value:
                issues.append(f"{name}: declared {given} but the backbone produces {value}")

        localization = self.architecture == 'backbone_vit_fcn'
        if self.localization_enabled is None:
            self.localization_enabled = localization
        elif bool(self.localization_enabled) != localization:
            issues.append(
                f"localization_enabled: {self.localization_enabled} contradicts architecture '{self.architecture}'"
            )
        if self.localization_channels is None:
            self.localization_channels = max(self.backbone_stage_channels[-1] // 4, 1)

        if self.uses_transformer:
            if self.patch_size < 1:
                issues.append(f"patch_size: must be >= 1, got {self.patch_size}")
            elif self.feature_height % self.patch_size or self.feature_width % self.patch_size:
                issues.append(
                    f"patch_size: P={self.patch_size} does not divide the "
                    f"{self.feature_height}x{self.feature_width} feature map"
                )
            if self.num_blocks < 1:
                issues.append(f"num_blocks: must be >= 1, got {self.num_blocks}")
            if self.num_heads < 1 or self.embed_dim % self.num_heads:
                issues.append(f"embed_dim: {self.embed_dim} is not divisible by num_heads {self.num_heads}")
            if self.mlp_ratio <= 0:
                issues.append("mlp_ratio: must be positive")

        return issues

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class ModelOutput:
    """Batched outputs of the hybrid classifier."""
    logits: torch.Tensor
    probabilities: torch.Tensor
    predicted_mask: Optional[torch.Tensor]
    activation_vector: torch.Tensor


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity or projected shortcut."""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class ResidualBackbone(nn.Module):
    """
    Residual feature extractor with a stride-1, kernel-3 stem.

    Each stage starts with a stride-2 block, so the spatial size shrinks by
    2 ** len(stage_channels) overall.
    """

    def __init__(self, in_channels, stage_channels, blocks_per_stage=1):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, stage_channels[0], 3, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(stage_channels[0]),
            nn.ReLU(inplace=True),
        )
        stages = []
        previous = stage_channels[0]
        for channels in stage_channels:
            blocks = [ResidualBlock(previous, channels, stride=2)]
            blocks += [ResidualBlock(channels, channels) for _ in range(blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            previous = channels
        self.stages = nn.Sequential(*stages)
        self.out_channels = previous

    def forward(self, x):
        return self.stages(self.stem(x))


class PatchEmbedding(nn.Module):
    """Linear patch projection E_p, class token and learned position embeddings E_pos."""

    def __init__(self, patch_dim, num_patches, embed_dim):
        super().__init__()
        self.patch_dim = patch_dim
        self.num_patches = num_patches
        self.projection = nn.Linear(patch_dim, embed_dim, bias=False)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        self.position_embeddings = nn.Parameter(torch.zeros(1, num_patches + 1, embed_dim))
        nn.init.normal_(self.cls_token, std=EMBED_INIT_STD)
        nn.init.normal_(self.position_embeddings, std=EMBED_INIT_STD)

    def forward(self, patches):
        if patches.shape[1:] != (self.num_patches, self.patch_dim):
            raise ConfigurationError(
                f"Patch sequence of shape {tuple(patches.shape[1:])} does not match "
                f"({self.num_patches}, {self.patch_dim}) expected by the embedding"
            )
        tokens = self.projection(patches)
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        return torch.cat([cls, tokens], dim=1) + self.position_embeddings


class TransformerBlock(nn.Module):
    """Pre-LN block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, embed_dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        hidden = int(embed_dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attention = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, embed_dim),
        )

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attention(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class TransformerEncoder(nn.Module):
    """Stack of N_b transformer blocks; an empty stack is the identity."""

    def __init__(self, embed_dim, num_blocks, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.blocks = nn.ModuleList(
            [TransformerBlock(embed_dim, num_heads, mlp_ratio) for _ in range(num_blocks)]
        )

    def forward(self, x):
        for index, block in enumerate(self.blocks):
            x = block(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"Non-finite values after transformer block {index}")
        return x


class LocalizationHead(nn.Module):
    """FCN head: conv, batch norm, ReLU, conv, sigmoid -> one mask channel at feature resolution."""

    def __init__(self, in_channels, hidden_channels):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, hidden_channels, 3, padding=1)
        self.bn = nn.BatchNorm2d(hidden_channels)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(hidden_channels, 1, 3, padding=1)

    def forward(self, features):
        x = self.conv2(self.relu(self.bn(self.conv1(features))))
        return torch.sigmoid(x).squeeze(1).clamp(MASK_EPS, 1.0 - MASK_EPS)


def patchify(feature_map, patch_size):
    """
    Reshape a feature map into a sequence of flattened P x P x D_f patches.

    Args:
        feature_map (torch.Tensor): Features of shape (B, D_f, H_f, W_f)
        patch_size (int): Patch side length P

    Returns:
        torch.Tensor: Patch sequence of shape (B, H_f*W_f/P^2, P*P*D_f), blocks in
            raster order, each flattened in (row, column, channel) order
    """
    height, width = feature_map.shape[-2:]
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise ConfigurationError(
            f"Patch size P={patch_size} does not divide the feature map (H_f={height}, W_f={width})"
        )
    return rearrange(feature_map, 'b c (h p1) (w p2) -> b (h w) (p1 p2 c)', p1=patch_size, p2=patch_size)


def embed(patches, embedding):
    """Prepend the class token to projected patches and add position embeddings."""
    return embedding(patches)


def encode(sequence, encoder):
    """Run the transformer encoder; the sequence shape is preserved."""
    return encoder(sequence)


def classify(encoded, head):
    """Read logits from the class-token row (row 0) of the encoded sequence."""
    return head(encoded[:, 0])


def localize(feature_map, localization_head):
    """Predict the manipulation mask from f_r; raises if localization is disabled."""
    if localization_head is None:
        raise UsageError("Localization head called but localization is disabled for this model")
    return localization_head(feature_map)


def softmax(logits):
    """Max-shifted softmax over the last dimension."""
    return torch.softmax(logits, dim=-1)


class HybridClassifier(nn.Module):
    """
    Backbone + transformer classifier with an optional FCN localization branch.

    The 'backbone' architecture replaces the transformer with global average
    pooling and a linear head, for ablations.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.backbone = ResidualBackbone(
            config.input_channels, config.backbone_stage_channels, config.blocks_per_stage
        )

        if config.uses_transformer:
            patch_dim = config.patch_size ** 2 * config.feature_channels
            self.patch_embedding = PatchEmbedding(patch_dim, config.num_patches, config.embed_dim)
            self.encoder = TransformerEncoder(
                config.embed_dim, config.num_blocks, config.num_heads, config.mlp_ratio
            )
            self.head = nn.Linear(config.embed_dim, config.num_classes)
        else:
            self.patch_embedding = None
            self.encoder = None
            self.head = nn.Linear(config.feature_channels, config.num_classes)

        if config.localization_enabled:
            self.localization_head = LocalizationHead(config.feature_channels, config.localization_channels)
        else:
            self.localization_head = None

    def extract_features(self, images):
        """
        Compute the shared feature map f_r.

        Args:
            images (torch.Tensor): Batch of shape (B, C, H, W) with values in [0, 1]

        Returns:
            torch.Tensor: Features of shape (B, D_f, H_f, W_f)
        """
        cfg = self.config
        expected = (cfg.input_channels, cfg.input_height, cfg.input_width)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ConfigurationError(
                f"Input of shape {tuple(images.shape)} does not match (B, {expected[0]}, {expected[1]}, {expected[2]})"
            )
        return self.backbone(images)

    def classify_features(self, features):
        if self.encoder is None:
            return self.head(features.mean(dim=(2, 3)))
        tokens = embed(patchify(features, self.config.patch_size), self.patch_embedding)
        return classify(encode(tokens, self.encoder), self.head)

    def forward(self, images):
        features = self.extract_features(images)
        logits = self.classify_features(features)
        mask = localize(features, self.localization_head) if self.localization_head is not None else None
        return ModelOutput(
            logits=logits,
            probabilities=softmax(logits),
            predicted_mask=mask,
            activation_vector=logits.detach().clone(),
        )


def build_model(config, seed=None):
    """
    Instantiate a randomly initialized hybrid classifier.

    Args:
        config (ModelConfig): Architecture hyperparameters
        seed (int, optional): Seed for parameter initialization

    Returns:
        HybridClassifier: The model
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = HybridClassifier(config)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Built {config.architecture} model (P={config.patch_size}) with {n_params} parameters")
    return model


@dataclass
class Predictions:
    """Stacked inference results over a dataset, as numpy arrays."""
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_masks: Optional[np.ndarray]
    labels: np.ndarray

    @property
    def predicted_labels(self):
        # argmax returns the first maximum, so ties go to the lowest class index
        return self.logits.argmax(axis=1)


@torch.no_grad()
def predict(model, dataset, batch_size=64):
    """
    Run the model in evaluation mode over a dataset.

    Args:
        model (HybridClassifier): Model to evaluate
        dataset (ManipulationDataset): Items of (image, mask, label)
        batch_size (int, optional): Inference batch size. Defaults to 64.

    Returns:
        Predictions: Logits, probabilities, predicted masks and labels
    """
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    logits, probabilities, masks, labels = [], [], [], []

    for images, _, targets in DataLoader(dataset, batch_size=batch_size, shuffle=False):
        output = model(images.to(device))
        logits.append(output.logits.cpu().numpy())
        probabilities.append(output.probabilities.cpu().numpy())
        if output.predicted_mask is not None:
            masks.append(output.predicted_mask.cpu().numpy())
        labels.append(targets.numpy())

    model.train(was_training)
    n_classes = model.config.num_classes
    return Predictions(
        logits=np.concatenate(logits) if logits else np.zeros((0, n_classes), dtype=np.float32),
        probabilities=np.concatenate(probabilities) if probabilities else np.zeros((0, n_classes), dtype=np.float32),
        predicted_masks=np.concatenate(masks) if masks else None,
        labels=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
    )
