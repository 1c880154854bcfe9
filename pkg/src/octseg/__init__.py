"""Shortest-path segmentation of ILM, RNFL and RPE boundaries in OCT B-scans."""

from .graph_search import GraphConfig, shortest_boundary, vertical_gradients
from .layers import SegmentConfig, segment_all
from .types import Boundary, BScan, SegmentationResult

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "BScan",
    "GraphConfig",
    "SegmentConfig",
    "SegmentationResult",
    "segment_all",
    "shortest_boundary",
    "vertical_gradients",
]
