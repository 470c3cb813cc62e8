"""Approximate kNN affinity graphs with random-projection LSH, and diffusion retrieval."""

__version__ = "0.1.0"

from .diffusion import (DiffusionParams, NonConvergenceError, RankedList, diffuse_queries,
                        diffuse_query, row_topk, seed_vector, solve_diffusion)
from .estimators import DiffusionRanker, LSHKNNGraph
from .eval import (GroundTruth, QueryTruth, average_precision, edge_recall,
                   mean_average_precision, read_ground_truth, read_rankings,
                   write_ground_truth, write_rankings)
from .graphbuild import (BuildReport, bucket_allpairs, build_bruteforce_graph, build_graph,
                         build_lsh_graph, build_multiprobe_graph)
from .lsh import (BucketTable, HashFamily, assign_buckets, assign_buckets_multiprobe,
                  hash_code, probe_neighbors)
from .sparse import (CooMatrix, CsrMatrix, coo_push, coo_sort_dedup, coo_to_csr, read_graph,
                     sym_lookup, sym_normalize, write_graph)
from .vecstore import (DescriptorSet, FvecsFormatError, ZeroNormError, cosine_similarity,
                       l2_normalize, load_fvecs, read_fvecs, write_fvecs)

__all__ = [
    "BucketTable", "BuildReport", "CooMatrix", "CsrMatrix", "DescriptorSet", "DiffusionParams",
    "DiffusionRanker", "FvecsFormatError", "GroundTruth", "HashFamily", "LSHKNNGraph",
    "NonConvergenceError", "QueryTruth", "RankedList", "ZeroNormError", "assign_buckets",
    "assign_buckets_multiprobe", "average_precision", "bucket_allpairs",
    "build_bruteforce_graph", "build_graph", "build_lsh_graph", "build_multiprobe_graph",
    "coo_push", "coo_sort_dedup", "coo_to_csr", "cosine_similarity", "diffuse_queries",
    "diffuse_query", "edge_recall", "hash_code", "l2_normalize", "load_fvecs",
    "mean_average_precision", "probe_neighbors", "read_fvecs", "read_graph",
    "read_ground_truth", "read_rankings", "row_topk", "seed_vector", "solve_diffusion",
    "sym_lookup", "sym_normalize", "write_fvecs", "write_graph", "write_ground_truth",
    "write_rankings",
]
