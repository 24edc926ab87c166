"""
Open-Set Manipulation Classifier

A toolkit for open-set classification of synthetic image manipulations.
It provides a hybrid residual-backbone / vision-transformer classifier with
an optional mask localization head, MSP, MLS and OpenMax rejection, ROC/AUC
evaluation and a procedural sandbox dataset that runs on a CPU.
"""

__version__ = "1.0.0"
