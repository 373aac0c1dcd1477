"""Dantzig selection with semiparametric bias correction for non-sparse linear models."""

from .model_core import CoefficientTruth, Dataset, DataError, load_csv, partition, standardize
from .pipeline import FitOptions, FitOutput, StageError, fit
from .predict import EvaluationReport, PredictionBundle, evaluate_cell, predict_bundle

__version__ = "0.1.0"

__all__ = [
    "CoefficientTruth",
    "Dataset",
    "DataError",
    "EvaluationReport",
    "FitOptions",
    "FitOutput",
    "PredictionBundle",
    "StageError",
    "evaluate_cell",
    "fit",
    "load_csv",
    "partition",
    "predict_bundle",
    "standardize",
]
