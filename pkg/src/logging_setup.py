#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Logging configuration for command line runs.

Library modules only create module-level loggers; handlers are attached
here once per process, writing both to a run log inside the output
directory and to the console.
"""

import os
import sys
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL = os.getenv('OSM_LOG_LEVEL', 'INFO').upper()

# Flag to enable/disable tqdm progress bars
SHOW_PROGRESS = os.getenv('OSM_PROGRESS', 'True').lower() in ('true', 'yes', '1')


def configure_logging(output_dir=None, level=None):
    """
    Configure root logging with a console handler and, optionally, a file handler.

    Args:
        output_dir (str, optional): Directory receiving ``run.log``. Skipped when None
            or when the directory cannot be created.
        level (str, optional): Log level name. Defaults to OSM_LOG_LEVEL.

    Returns:
        logging.Logger: The root logger
    """
    handlers = [logging.StreamHandler(sys.stderr)]

    if output_dir is not None:
        try:
            os.makedirs(output_dir, exist_ok=True)
            handlers.append(logging.FileHandler(os.path.join(output_dir, 'run.log')))
        except OSError as e:
            # The command itself reports the unwritable directory
            print(f"Warning: file logging disabled ({e})", file=sys.stderr)

    logging.basicConfig(
        level=getattr(logging, level or LOG_LEVEL, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )
    return logging.getLogger()
