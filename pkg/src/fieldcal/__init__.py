"""Field-level calibration for binary classifiers.

Metrics that measure miscalibration per level of a chosen categorical field,
classic univariate calibrators (histogram binning, isotonic regression, Platt
scaling), isotonic line-plot scaling (ILPS), and Neural Calibration, which adds
a learned per-row correction ``g(x)`` on top of ILPS.
"""

from .data import DataSplits, Dataset, Schema, SynthConfig, load_csv, split, synthesize, write_csv
from .errors import ConfigError, DataError, FieldcalError, MetricError, SchemaError, TrainingError
from .metrics import (
    MetricsReport,
    PredictionSet,
    auc,
    brier,
    evaluate_all,
    field_ece,
    field_rce,
    log_loss,
    prob_ece,
)
from .neural import (
    MLPModel,
    NeuralCalibration,
    TrainConfig,
    fit_neural_calibration,
    gradient_check,
    incremental_update,
    nc_predict,
    predict_logits,
    train_base,
)
from .pipeline import ExperimentConfig, ExperimentReport, compare_ablation, run_pipeline
from .scaling import (
    FitConfig,
    HistogramBinning,
    ILPSParams,
    IsotonicMapping,
    PlattParams,
    apply,
    fit_histogram_binning,
    fit_ilps,
    fit_isotonic,
    fit_platt,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "DataSplits", "Dataset", "ExperimentConfig", "ExperimentReport",
    "FieldcalError", "FitConfig", "HistogramBinning", "ILPSParams", "IsotonicMapping", "MLPModel",
    "MetricError", "MetricsReport", "NeuralCalibration", "PlattParams", "PredictionSet", "Schema",
    "SchemaError", "SynthConfig", "TrainConfig", "TrainingError", "apply", "auc", "brier",
    "compare_ablation", "evaluate_all", "field_ece", "field_rce", "fit_histogram_binning", "fit_ilps",
    "fit_isotonic", "fit_neural_calibration", "fit_platt", "gradient_check", "incremental_update",
    "load_csv", "log_loss", "nc_predict", "predict_logits", "prob_ece", "run_pipeline", "split",
    "synthesize", "train_base", "write_csv",
]
