"""Temporal-shift-aware graph neural network for seller GMV forecasting.

Layered as: a small float64 autodiff tensor core; a seller-graph data model
with ego-subgraph extraction; the per-node encoder (feature fusion + gated
multi-scale causal convolutions); graph attention layers that score
time-shifted neighbor influence; a synthetic-universe generator with planted
seasonality, lead-lag and history truncation; and a training/evaluation
harness with baselines and binary checkpoints. The ``gaia`` CLI wires it all
together.
"""

from .config import TrainConfig
from .graph import Edge, EgoSubgraph, ESellerGraph, Relation, SellerNode, extract_ego, load_graph, save_graph
from .metrics import MetricsReport, summary_metrics
from .model import ABLATIONS, GaiaModel
from .synth import NEW_SHOP_THRESHOLD, NodeTruth, SynthSpec, generate, split
from .tensor import Tensor, backward, check_gradients, no_grad

__all__ = [
    "ABLATIONS",
    "Edge",
    "EgoSubgraph",
    "ESellerGraph",
    "GaiaModel",
    "MetricsReport",
    "NEW_SHOP_THRESHOLD",
    "NodeTruth",
    "Relation",
    "SellerNode",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "backward",
    "check_gradients",
    "extract_ego",
    "generate",
    "load_graph",
    "no_grad",
    "save_graph",
    "split",
    "summary_metrics",
]

__version__ = "0.1.0"
