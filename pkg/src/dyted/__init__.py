"""Disentangled time-invariant / time-varying representations of dynamic graphs."""
from .estimator import BackboneEmbedder, DyTedEmbedder, check_dynamic_graph
from .graph import DynamicGraph, LabelTable, PlantedConfig, Snapshot, generate_planted, read_edge_list
from .training import RepresentationSet, TrainConfig, extract_representations, train, train_backbone

__all__ = [
    "BackboneEmbedder", "DyTedEmbedder", "check_dynamic_graph",
    "DynamicGraph", "LabelTable", "PlantedConfig", "Snapshot", "generate_planted", "read_edge_list",
    "RepresentationSet", "TrainConfig", "extract_representations", "train", "train_backbone",
]

__version__ = "0.1.0"
