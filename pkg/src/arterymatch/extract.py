"""Mask -> individual graph orchestration.

Chains thinning, key-point detection, segment tracing, tree orientation,
and feature extraction into one call.  The root (the inlet segment, where
the catheter enters) is the endpoint nearest a caller-supplied hint, or,
without a hint, the endpoint nearest the image border.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GraphValidationError
from .features import (
    FEATURE_MANIFEST_VERSION,
    FeatureConfig,
    build_segment_tree,
    compute_features,
)
from .graphs import GraphNode, IndividualGraph
from .skeleton import (
    BinaryMask,
    KeyPointRef,
    TracedSegment,
    _arc_pixels_of,
    detect_key_points,
    thin_mask,
    trace_segments,
)

__all__ = ["select_root_ref", "build_individual_graph", "extract_graph"]


def select_root_ref(
    segments: list[TracedSegment],
    mask: BinaryMask,
    root_hint: tuple[float, float] | None = None,
) -> KeyPointRef:
    """Pick the endpoint key point that roots the tree."""
    endpoints = sorted(
        {ref for seg in segments for ref in seg.ends if ref[0] == "endpoint"},
        key=lambda ref: (ref[1][1], ref[1][0]),
    )
    if not endpoints:
        raise GraphValidationError("no endpoint key point found to root the tree at")
    if root_hint is not None:
        hx, hy = float(root_hint[0]), float(root_hint[1])
        return min(endpoints, key=lambda ref: (math.hypot(ref[1][0] - hx, ref[1][1] - hy), ref[1][1], ref[1][0]))

    def border_distance(ref: KeyPointRef) -> float:
        x, y = ref[1]
        return min(x, y, mask.width - 1 - x, mask.height - 1 - y)

    return min(endpoints, key=lambda ref: (border_distance(ref), ref[1][1], ref[1][0]))


def build_individual_graph(
    segments: list[TracedSegment],
    mask: BinaryMask,
    config: FeatureConfig | None = None,
    root_hint: tuple[float, float] | None = None,
    view_angle: str = "LAO",
) -> IndividualGraph:
    """One node per traced segment; edges join segments sharing a key point."""
    if not segments:
        raise GraphValidationError("cannot build a graph from zero segments")
    config = config or FeatureConfig()
    root_ref = select_root_ref(segments, mask, root_hint)
    owned = [_arc_pixels_of(seg) for seg in segments]
    tree = build_segment_tree(segments, root_ref, owned)
    feats = compute_features(tree, mask, config)
    nodes = [
        GraphNode(
            id=k,
            features=feats[k],
            key_points=(
                (float(tree.proximal[k][1][0]), float(tree.proximal[k][1][1])),
                (float(tree.distal[k][1][0]), float(tree.distal[k][1][1])),
            ),
        )
        for k in range(len(segments))
    ]
    return IndividualGraph(
        nodes=nodes,
        edges=set(tree.edges),
        view_angle=view_angle,
        root_node_id=tree.root_segment,
        feature_manifest_version=FEATURE_MANIFEST_VERSION,
    )


def extract_graph(
    mask: BinaryMask,
    config: FeatureConfig | None = None,
    root_hint: tuple[float, float] | None = None,
    view_angle: str = "LAO",
    prune_len: int = 5,
) -> IndividualGraph:
    """Full pipeline: thin, find key points, trace, prune, featurize."""
    centerline = thin_mask(mask)
    keypoints = detect_key_points(centerline)
    segments = trace_segments(centerline, keypoints, prune_len=prune_len)
    return build_individual_graph(segments, mask, config, root_hint, view_angle)


def mask_from_arrays(bits: np.ndarray, intensity: np.ndarray | None = None) -> BinaryMask:
    return BinaryMask(bits=bits, intensity=intensity)
