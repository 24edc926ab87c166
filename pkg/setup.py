#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line for line in fh.read().splitlines() if line and not line.startswith("#")]

setup(
    name="open-set-manipulation",
    version="1.0.0",
    description="Open-set classification of synthetic image manipulations with a hybrid CNN/ViT model",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    py_modules=[
        "cli",
        "data_validation",
        "dataset",
        "evaluation",
        "exceptions",
        "experiment",
        "generate_report",
        "logging_setup",
        "model",
        "rejection",
        "synthetic",
        "training",
        "visualize",
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "osm=cli:main",
        ],
    },
    include_package_data=True,
)
