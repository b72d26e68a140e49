"""Throughput-time prediction under distributional shift, feeding an
earliness/tardiness order scheduler."""
from . import datagen, diagnostics, experiment, nn, predictors, scheduler, trees

__version__ = "0.1.0"
__all__ = ["datagen", "diagnostics", "experiment", "nn", "predictors", "scheduler", "trees"]
