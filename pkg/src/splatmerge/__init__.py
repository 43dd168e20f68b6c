"""Training-free simplification of 3D Gaussian Splatting assets.

Splats are merged pairwise over a k-nearest-neighbour graph. Candidate pairs
are ranked by the KL divergence between the pair's mixture and its
moment-matched replacement, plus an appearance distance, and the cheapest
disjoint pairs are collapsed pass after pass until the target count is
reached.
"""

__version__ = "0.1.0"

from .gsply_io import read_splat_ply, write_splat_ply
from .merge_cost import CostMode, CostParams, SharedSampleBank, edge_costs
from .mpmm import MergePlan, apply_plan, mass_weight, merge_pair
from .simplifier import SimplifyConfig, SimplifyReport, greedy_disjoint_pairs, opacity_filter, simplify
from .spatial_graph import MergeGraph, knn, undirected_union_edges
from .splat_model import Splat, SplatSet, covariance_from_scale_rot, scale_rot_from_covariance

__all__ = [
    "CostMode",
    "CostParams",
    "MergeGraph",
    "MergePlan",
    "SharedSampleBank",
    "SimplifyConfig",
    "SimplifyReport",
    "Splat",
    "SplatSet",
    "apply_plan",
    "covariance_from_scale_rot",
    "edge_costs",
    "greedy_disjoint_pairs",
    "knn",
    "mass_weight",
    "merge_pair",
    "opacity_filter",
    "read_splat_ply",
    "scale_rot_from_covariance",
    "simplify",
    "undirected_union_edges",
    "write_splat_ply",
]
