"""Graph ingestion, synthesis, normalization, partitioning, and caching."""

from .graph import Graph, NormalizedAdjacency, make_masks, normalized_adjacency, synth_sbm
from .ingest import load_citation_graph
from .partition import ClientGraph, PartitionSpec, partition
from .cache import load_partition, save_partition

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "ClientGraph",
    "PartitionSpec",
    "load_citation_graph",
    "load_partition",
    "make_masks",
    "normalized_adjacency",
    "partition",
    "save_partition",
    "synth_sbm",
]
