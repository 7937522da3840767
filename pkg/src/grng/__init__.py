"""Exact incremental relative neighborhood graphs over a hierarchy of GRNG pivot layers."""

from .metric import (
    CountedMetric,
    DataPoint,
    Dataset,
    DimensionMismatchError,
    DuplicatePointError,
    RejectedInputError,
    StageStats,
    get_metric,
    verify_metric_axioms,
)
from .oracles import (
    UndirectedGraph,
    brute_gg,
    brute_grng,
    brute_knn,
    brute_mst,
    brute_rng,
    rng_neighbors_of_query,
)
from .hierarchy import Hierarchy, HierarchyConfig, build, validate

__all__ = [
    "CountedMetric", "DataPoint", "Dataset", "DimensionMismatchError", "DuplicatePointError",
    "RejectedInputError", "StageStats", "get_metric", "verify_metric_axioms",
    "UndirectedGraph", "brute_gg", "brute_grng", "brute_knn", "brute_mst", "brute_rng",
    "rng_neighbors_of_query", "Hierarchy", "HierarchyConfig", "build", "validate",
]
