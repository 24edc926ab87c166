#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Report generation for open-set manipulation experiments.

Writes the machine-readable artifacts of an evaluation (report.json and
one ROC CSV per strategy), an HTML summary rendered from
templates/report_template.html, and the summary tables of ablation sweeps.
report.json carries no timestamps so that re-running an evaluation on the
same inputs reproduces it exactly.
"""

import os
import json
import logging

import pandas as pd
from jinja2 import Environment, FileSystemLoader, select_autoescape

from visualize import generate_all_visualizations, plot_sweep

# Configure logging
logger = logging.getLogger(__name__)

# Define constants
TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'templates')
REPORT_TEMPLATE = 'report_template.html'


def write_json(document, path):
    """Write JSON with sorted keys and a trailing newline."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_roc_csv(curve, path):
    """
    Save an ROC curve as CSV with header threshold,fpr,tpr.

    Args:
        curve (RocCurve): The curve
        path (str): Output file

    Returns:
        str: Path to the CSV
    """
    df = pd.DataFrame({'threshold': curve.thresholds, 'fpr': curve.fpr, 'tpr': curve.tpr})
    df.to_csv(path, index=False)
    return path


def render_html_report(report, plot_paths, path, title=None, extra=None):
    """
    Render the HTML summary of an evaluation.

    Args:
        report (MetricsReport): Metrics to show
        plot_paths (dict): Plot name -> image path
        path (str): Output HTML file
        title (str, optional): Page title
        extra (dict, optional): Additional template variables

    Returns:
        str: Path to the generated report
    """
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=select_autoescape(['html']))
    template = env.get_template(REPORT_TEMPLATE)

    base = os.path.dirname(os.path.abspath(path))
    plots = {name: os.path.relpath(p, base) for name, p in sorted(plot_paths.items())}
    html_content = template.render(
        title=title or f'Open-set evaluation: {report.split_name}',
        report=report.to_dict(),
        plots=plots,
        **(extra or {})
    )
    with open(path, 'w') as f:
        f.write(html_content)
    return path


def write_evaluation_artifacts(report, output_dir, mask_examples=None, make_plots=True):
    """
    Write report.json, roc_<strategy>.csv, plots/*.png and report.html.

    Args:
        report (MetricsReport): Evaluation metrics
        output_dir (str): Experiment output directory
        mask_examples (dict, optional): Passed on to plot_mask_examples
        make_plots (bool, optional): Whether to render plots and the HTML report

    Returns:
        dict: Artifact name -> path
    """
    os.makedirs(output_dir, exist_ok=True)
    artifacts = {'report': write_json(report.to_dict(), os.path.join(output_dir, 'report.json'))}

    for strategy, curve in sorted(report.roc_curves.items()):
        artifacts[f'roc_{strategy}'] = write_roc_csv(curve, os.path.join(output_dir, f'roc_{strategy}.csv'))

    if make_plots:
        plot_paths = generate_all_visualizations(report, os.path.join(output_dir, 'plots'), mask_examples)
        artifacts.update({f'plot_{name}': p for name, p in plot_paths.items()})
        artifacts['html'] = render_html_report(report, plot_paths, os.path.join(output_dir, 'report.html'))

    logger.info(f"Evaluation report written to {artifacts['report']}")
    return artifacts


def summarize_sweep(rows):
    """
    Average sweep results over seeds.

    Args:
        rows (list): Dicts with 'variant', 'seed', 'closed_accuracy' and 'auc_<strategy>' keys

    Returns:
        tuple: (per-run DataFrame, per-variant mean DataFrame in sweep order)
    """
    runs = pd.DataFrame(rows)
    metrics = [c for c in runs.columns if c == 'closed_accuracy' or c.startswith('auc_') or c == 'final_train_mse']
    runs[metrics] = runs[metrics].apply(pd.to_numeric)
    summary = runs.groupby('variant', sort=False)[metrics].mean().reset_index()
    summary.insert(1, 'num_seeds', runs.groupby('variant', sort=False).size().to_numpy())
    return runs, summary


def write_sweep_artifacts(rows, axis, output_dir, metadata, make_plots=True):
    """
    Write sweep.csv, sweep_summary.csv, sweep_metadata.json and the comparison plot.

    Args:
        rows (list): One dict per (variant, seed) run
        axis (str): Swept parameter
        output_dir (str): Sweep output directory
        metadata (dict): Extra information stored in sweep_metadata.json
        make_plots (bool, optional): Whether to render the comparison chart

    Returns:
        dict: Artifact name -> path
    """
    runs, summary = summarize_sweep(rows)
    artifacts = {
        'sweep': os.path.join(output_dir, 'sweep.csv'),
        'summary': os.path.join(output_dir, 'sweep_summary.csv'),
    }
    runs.to_csv(artifacts['sweep'], index=False)
    summary.to_csv(artifacts['summary'], index=False)
    artifacts['metadata'] = write_json(dict(metadata, axis=axis), os.path.join(output_dir, 'sweep_metadata.json'))

    if make_plots:
        artifacts['plot'] = plot_sweep(summary, axis, os.path.join(output_dir, 'plots'))

    logger.info(f"Sweep over {axis}: {len(summary)} variant(s), {len(runs)} run(s) -> {artifacts['sweep']}")
    return artifacts
