"""Spatiotemporal feature fusion for CAN bus anomaly detection.

The pipeline: parse or synthesize CAN traffic, train a small payload
predictor on attack-free frames, fuse raw fields with windowed entropy
features and prediction errors, jointly optimize the window size and
feature subset with a genetic algorithm, classify with tree ensembles,
and validate model comparisons with the 5x2cv paired t-test.
"""

from .errors import (
    AlignmentError,
    CanfuseError,
    ConfigError,
    DivergenceError,
    OrderingError,
    ParseError,
    ValidationError,
)
from .fusion import CANONICAL_COLUMNS, FusedMatrix, apply_mask, assemble
from .ingest import CanFrame, FrameTable, Normalizer, SplitSpec, parse_log, split
from .ml import DecisionTree, DtParams, EvalReport, RandomForest, RfParams
from .spatial import PredictorModel
from .synth import AttackSpec, IdSpec, TrafficProfile, generate

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AttackSpec",
    "CANONICAL_COLUMNS",
    "CanFrame",
    "CanfuseError",
    "ConfigError",
    "DecisionTree",
    "DivergenceError",
    "DtParams",
    "EvalReport",
    "FrameTable",
    "FusedMatrix",
    "IdSpec",
    "Normalizer",
    "OrderingError",
    "ParseError",
    "PredictorModel",
    "RandomForest",
    "RfParams",
    "SplitSpec",
    "TrafficProfile",
    "ValidationError",
    "apply_mask",
    "assemble",
    "generate",
    "parse_log",
    "split",
    "__version__",
]
