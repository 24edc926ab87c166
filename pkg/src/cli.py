#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Command line entry point.

    osm generate --config CONFIG [--seed N] [--out DIR]
    osm train    --config CONFIG [--seed N] [--out DIR] [--resume CHECKPOINT]
    osm eval     --config CONFIG [--seed N] [--out DIR] [--checkpoint CHECKPOINT]
    osm sweep    --config CONFIG --axis {patch_size,architecture} [--values ...] [--seeds ...]

Exit codes: 0 success, 1 configuration or input error, 2 runtime or
numeric failure.
"""

import os
import sys
import argparse
import logging

import torch
from dotenv import load_dotenv

from exceptions import NumericError, USER_ERRORS
from experiment import (
    SWEEP_AXES, generate_data, load_experiment_config, run_evaluation, run_sweep, run_training,
)
from logging_setup import configure_logging

# Load environment variables
load_dotenv()

logger = logging.getLogger('cli')

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_RUNTIME_ERROR = 2

NUM_THREADS = os.getenv('OSM_NUM_THREADS')


def cmd_generate(args):
    config = load_experiment_config(args.config, seed=args.seed, out=args.out)
    configure_logging(config.output_dir)
    logger.info("Generating synthetic data")
    manifest_path = generate_data(config)
    print(manifest_path)
    return manifest_path


def cmd_train(args):
    config = load_experiment_config(args.config, seed=args.seed, out=args.out)
    configure_logging(config.output_dir)
    logger.info(f"Training {config.model.architecture} (P={config.model.patch_size}) into {config.output_dir}")
    checkpoint_path = run_training(config, resume_path=args.resume)
    print(checkpoint_path)
    return checkpoint_path


def cmd_eval(args):
    config = load_experiment_config(args.config, seed=args.seed, out=args.out)
    configure_logging(config.output_dir)
    logger.info(f"Evaluating strategies {[s.value for s in config.strategies]}")
    report, artifacts = run_evaluation(config, checkpoint_path=args.checkpoint)
    print(artifacts['report'])
    return artifacts['report']


def cmd_sweep(args):
    config = load_experiment_config(args.config, seed=args.seed, out=args.out)
    configure_logging(config.output_dir)
    artifacts = run_sweep(config, args.axis, values=args.values, seeds=args.seeds)
    print(artifacts['summary'])
    return artifacts['summary']


def build_parser():
    parser = argparse.ArgumentParser(
        prog='osm',
        description='Open-set classification of synthetic image manipulations',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_common(sub):
        sub.add_argument('--config', required=True, help='experiment JSON file')
        sub.add_argument('--seed', type=int, default=None, help='override the configured seed')
        sub.add_argument('--out', default=None, help='override the output directory')

    generate = subparsers.add_parser('generate', help='generate the synthetic sandbox dataset')
    add_common(generate)
    generate.set_defaults(handler=cmd_generate)

    train_cmd = subparsers.add_parser('train', help='train on the closed-set training pool')
    add_common(train_cmd)
    train_cmd.add_argument('--resume', default=None, help='checkpoint to resume from')
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = subparsers.add_parser('eval', help='fit OpenMax and evaluate the open-set split')
    add_common(eval_cmd)
    eval_cmd.add_argument('--checkpoint', default=None, help='checkpoint (default: <output_dir>/checkpoint.pt)')
    eval_cmd.set_defaults(handler=cmd_eval)

    sweep = subparsers.add_parser('sweep', help='ablation over patch size or architecture')
    add_common(sweep)
    sweep.add_argument('--axis', required=True, choices=SWEEP_AXES)
    sweep.add_argument('--values', nargs='+', default=None, help='values along the axis')
    sweep.add_argument('--seeds', nargs='+', type=int, default=None, help='seeds to repeat each variant with')
    sweep.set_defaults(handler=cmd_sweep)

    return parser


def main(argv=None):
    """
    Run one command.

    Returns:
        int: Process exit code
    """
    args = build_parser().parse_args(argv)
    configure_logging()
    if NUM_THREADS:
        torch.set_num_threads(int(NUM_THREADS))

    try:
        args.handler(args)
        return EXIT_OK
    except USER_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USER_ERROR
    except NumericError as e:
        logger.error(f"{args.command} failed with a numeric error: {e}")
        return EXIT_RUNTIME_ERROR
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
