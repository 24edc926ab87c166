#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Visualization module for open-set manipulation experiments.

Generates ROC curves per rejection strategy, a closed-set / open-set
summary chart per split, ablation sweep charts and predicted-mask panels.
"""

import os
import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns
from einops import repeat

# Configure logging
logger = logging.getLogger(__name__)

# Set style for matplotlib
sns.set(style="whitegrid")

PLOT_DPI = 150


def _save(fig, output_dir, filename):
    os.makedirs(output_dir, exist_ok=True)
    output_path = os.path.join(output_dir, filename)
    fig.savefig(output_path, dpi=PLOT_DPI, bbox_inches='tight')
    plt.close(fig)
    return output_path


def plot_roc_curves(curves, output_dir, title='Open-set ROC'):
    """
    Plot one ROC curve per rejection strategy.

    Args:
        curves (dict): Strategy name -> RocCurve
        output_dir (str): Directory to save the chart
        title (str, optional): Chart title

    Returns:
        str: Path to the saved chart, or None when there is nothing to plot
    """
    if not curves:
        return None

    fig, ax = plt.subplots(figsize=(6, 6))
    for name, curve in sorted(curves.items()):
        ax.plot(curve.fpr, curve.tpr, linewidth=2, label=f'{name.upper()} (AUC {curve.auc:.3f})')
    ax.plot([0, 1], [0, 1], color='grey', linestyle='--', linewidth=1)

    ax.set_title(title, fontsize=14)
    ax.set_xlabel('False positive rate (out-of-set accepted)', fontsize=12)
    ax.set_ylabel('True positive rate (in-set accepted)', fontsize=12)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.legend(loc='lower right')
    fig.tight_layout()

    return _save(fig, output_dir, 'roc_curves.png')


def plot_split_summary(report, output_dir):
    """
    Closed-set per-class accuracy bars next to open-set AUC per strategy.

    Args:
        report (MetricsReport): Metrics of one split
        output_dir (str): Directory to save the chart

    Returns:
        str: Path to the saved chart
    """
    fig, (ax_closed, ax_open) = plt.subplots(1, 2, figsize=(12, 5), gridspec_kw={'width_ratios': [2, 1]})

    names = report.class_names or [str(c) for c in range(len(report.per_class_accuracy))]
    accuracy = [np.nan if a is None else 100.0 * a for a in report.per_class_accuracy]
    sns.barplot(x=names, y=accuracy, color='#8884d8', ax=ax_closed)
    ax_closed.axhline(100.0 * report.closed_accuracy, color='r', linestyle='--',
                      label=f'Overall {100.0 * report.closed_accuracy:.2f}%')
    ax_closed.set_title(f'Closed-set accuracy ({report.split_name})', fontsize=14)
    ax_closed.set_ylabel('Accuracy (%)', fontsize=12)
    ax_closed.set_ylim(0, 100)
    ax_closed.tick_params(axis='x', rotation=45)
    ax_closed.legend(loc='lower right')

    strategies = sorted(k for k, v in report.auc_by_strategy.items() if v is not None)
    values = [100.0 * report.auc_by_strategy[k] for k in strategies]
    if strategies:
        sns.barplot(x=[s.upper() for s in strategies], y=values, color='#82ca9d', ax=ax_open)
        for i, value in enumerate(values):
            ax_open.text(i, value + 1, f'{value:.2f}', ha='center', fontsize=10)
    ax_open.set_title('Open-set AUC', fontsize=14)
    ax_open.set_ylabel('AUC (%)', fontsize=12)
    ax_open.set_ylim(0, 105)
    fig.tight_layout()

    return _save(fig, output_dir, 'split_summary.png')


def plot_sweep(summary, axis, output_dir):
    """
    Grouped bars of closed-set accuracy and AUC per strategy for each sweep variant.

    Args:
        summary (pandas.DataFrame): One row per variant with 'variant', 'closed_accuracy'
            and 'auc_<strategy>' columns (means over seeds)
        axis (str): Swept parameter, used in the title and file name
        output_dir (str): Directory to save the chart

    Returns:
        str: Path to the saved chart
    """
    metrics = ['closed_accuracy'] + sorted(c for c in summary.columns if c.startswith('auc_'))
    long = summary.melt(id_vars='variant', value_vars=metrics, var_name='metric', value_name='value')
    long['value'] = 100.0 * long['value'].astype(float)
    long['metric'] = long['metric'].str.replace('auc_', 'AUC ', regex=False).str.replace(
        'closed_accuracy', 'Closed accuracy', regex=False)

    fig, ax = plt.subplots(figsize=(10, 5))
    sns.barplot(data=long, x='variant', y='value', hue='metric', ax=ax)
    ax.set_title(f'Ablation over {axis}', fontsize=14)
    ax.set_xlabel(axis, fontsize=12)
    ax.set_ylabel('%', fontsize=12)
    ax.set_ylim(0, 105)
    ax.legend(loc='lower right')
    fig.tight_layout()

    return _save(fig, output_dir, f'sweep_{axis}.png')


def upsample_mask(mask, height, width):
    """Nearest-neighbour upsampling of an H_f x W_f mask to image resolution."""
    mask = np.asarray(mask)
    return repeat(mask, 'h w -> (h s1) (w s2)', s1=height // mask.shape[0], s2=width // mask.shape[1])


def plot_mask_examples(images, gt_masks, pred_masks, output_dir, titles=None, max_examples=6):
    """
    Rows of image / ground-truth mask / predicted mask.

    Args:
        images (numpy.ndarray): Images of shape (n, 3, H, W) in [0, 1]
        gt_masks (numpy.ndarray): Feature-resolution ground truth, (n, H_f, W_f)
        pred_masks (numpy.ndarray): Feature-resolution predictions, (n, H_f, W_f)
        output_dir (str): Directory to save the chart
        titles (list, optional): Row labels
        max_examples (int, optional): Number of rows. Defaults to 6.

    Returns:
        str: Path to the saved chart, or None when there is nothing to plot
    """
    n = min(len(images), max_examples)
    if n == 0 or pred_masks is None:
        return None

    height, width = images.shape[-2:]
    fig, axes = plt.subplots(n, 3, figsize=(7, 2.4 * n), squeeze=False)
    for i in range(n):
        panels = [
            (np.transpose(images[i], (1, 2, 0)), 'Image'),
            (upsample_mask(gt_masks[i], height, width), 'Ground truth'),
            (upsample_mask(pred_masks[i], height, width), 'Predicted'),
        ]
        for j, (panel, label) in enumerate(panels):
            ax = axes[i, j]
            ax.imshow(panel, cmap=None if j == 0 else 'gray', vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.grid(False)
            if i == 0:
                ax.set_title(label, fontsize=11)
        if titles is not None:
            axes[i, 0].set_ylabel(titles[i], fontsize=9)
    fig.tight_layout()

    return _save(fig, output_dir, 'mask_examples.png')


def generate_all_visualizations(report, output_dir, mask_examples=None):
    """
    Generate the evaluation plots and return their paths.

    Args:
        report (MetricsReport): Metrics with ROC curves
        output_dir (str): Plot directory
        mask_examples (dict, optional): 'images', 'gt_masks', 'pred_masks', 'titles'

    Returns:
        dict: Plot name -> path (missing plots are omitted)
    """
    paths = {
        'roc_curves': plot_roc_curves(report.roc_curves, output_dir, f'Open-set ROC ({report.split_name})'),
        'split_summary': plot_split_summary(report, output_dir),
    }
    if mask_examples is not None:
        paths['mask_examples'] = plot_mask_examples(output_dir=output_dir, **mask_examples)

    paths = {name: path for name, path in paths.items() if path is not None}
    logger.info(f"Generated {len(paths)} plot(s) in {output_dir}")
    return paths
