"""Power models for VR video playback built from power-meter traces."""
from __future__ import annotations

__version__ = "0.1.0"

from .dataset import (
    ADVANCED,
    SIMPLIFIED,
    DesignMatrix,
    Measurement,
    ModelSpec,
    PlaybackConfig,
    SequenceMeta,
    build_design,
    feature_vector,
    load_measurements,
    dump_measurements,
)
from .errors import VRPowerError
from .evaluation import (
    ContributionReport,
    EvaluationReport,
    SavingsEstimate,
    contributions,
    cross_validate,
    error_metrics,
    estimate_savings,
    prune_variables,
)
from .solver import PowerModel, fit, load_model, predict, save_model
from .synth import SynthConfig, generate
from .trace import PowerTrace, WindowSpec, mean_power, net_power, parse_trace

__all__ = [
    "ADVANCED",
    "SIMPLIFIED",
    "ContributionReport",
    "DesignMatrix",
    "EvaluationReport",
    "Measurement",
    "ModelSpec",
    "PlaybackConfig",
    "PowerModel",
    "PowerTrace",
    "SavingsEstimate",
    "SequenceMeta",
    "SynthConfig",
    "VRPowerError",
    "WindowSpec",
    "build_design",
    "contributions",
    "cross_validate",
    "dump_measurements",
    "error_metrics",
    "estimate_savings",
    "feature_vector",
    "fit",
    "generate",
    "load_measurements",
    "load_model",
    "mean_power",
    "net_power",
    "parse_trace",
    "predict",
    "prune_variables",
    "save_model",
]
