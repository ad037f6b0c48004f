from .road_network import RoadNetwork, line_graph, load_network, save_network, turn_angle
from .embedding import EmbeddingTable, embed_network, load_embeddings, save_embeddings
from .featurization import CategoricalVocab, FeatureStats, Featurizer, SegmentBatch, build_subpaths, time_slot

__all__ = [
    "RoadNetwork",
    "line_graph",
    "load_network",
    "save_network",
    "turn_angle",
    "EmbeddingTable",
    "embed_network",
    "load_embeddings",
    "save_embeddings",
    "CategoricalVocab",
    "FeatureStats",
    "Featurizer",
    "SegmentBatch",
    "build_subpaths",
    "time_slot",
]
