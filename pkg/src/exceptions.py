#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exception types raised across the open-set manipulation toolkit.

Validation-style errors carry the full list of issues that were found so
callers can report everything at once instead of failing on the first
problem.
"""


class ConfigurationError(ValueError):
    """Raised when a configuration or tensor shape does not match what is expected."""

    def __init__(self, message, issues=None):
        super().__init__(message)
        self.issues = list(issues or [])


class ManifestError(ValueError):
    """Raised when a dataset manifest cannot be loaded or fails validation."""

    def __init__(self, message, issues=None):
        super().__init__(message)
        self.issues = list(issues or [])


class SplitError(ValueError):
    """Raised when a split configuration is inconsistent with a manifest."""


class UsageError(RuntimeError):
    """Raised when an operation is called in a mode that does not support it."""


class NumericError(ArithmeticError):
    """Raised when non-finite values appear during a forward pass or training."""


class DegenerateFitError(ValueError):
    """Raised when a Weibull tail cannot be fitted (e.g. all samples equal)."""


class OpenMaxFitError(ValueError):
    """Raised when OpenMax cannot be fitted for one of the in-set classes."""


class CheckpointError(RuntimeError):
    """Raised for unreadable checkpoints and parameter key mismatches."""

    def __init__(self, message, missing=None, unexpected=None):
        super().__init__(message)
        self.missing = list(missing or [])
        self.unexpected = list(unexpected or [])


# Errors the user can fix by changing inputs; everything else is a runtime failure.
USER_ERRORS = (ConfigurationError, ManifestError, SplitError, CheckpointError, OSError)
