"""Gated graph-attention classification of storm outage durations."""

from biggat.graph import Graph, HopMatrix, build_graph, hop_adjacency, neighborhood_sets
from biggat.model import ModelConfig, ModelParams, forward, init_params
from biggat.spatial import MoranResult, global_morans_i, nhop_morans_i

__all__ = [
    "Graph",
    "HopMatrix",
    "ModelConfig",
    "ModelParams",
    "MoranResult",
    "build_graph",
    "forward",
    "global_morans_i",
    "hop_adjacency",
    "init_params",
    "neighborhood_sets",
    "nhop_morans_i",
]

__version__ = "0.1.0"
