"""Structure-aware nested-function networks.

Counting analysis of what a fixed topology can represent, smooth spline and
boosted tree-ensemble training engines, and a gradient-direction
decomposability detector.
"""
from .expr import ExprError, parse_expr
from .topology import NetworkTopology, TopologyError, three_model_topology, validate
from .training import Dataset, EngineConfig, TrainingTrace, normalized_rmse, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EngineConfig", "ExprError", "NetworkTopology", "TopologyError",
    "TrainingTrace", "normalized_rmse", "parse_expr", "three_model_topology",
    "train", "validate",
]
