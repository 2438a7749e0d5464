"""Per-segment feature extraction: topology, position, intensity/shape.

The feature set is versioned (``FEATURE_MANIFEST_VERSION``); names and order
are fixed by :func:`feature_names`.  Three toggleable groups:

* topology (2): the degrees of the segment's two key points, ascending.
* position (20): all normalized to [0, 1] against image size, tree totals,
  or graph maxima; see the name list for the exact definitions.
* intensity/shape (14): first-order statistics of the intensity plane over
  the mask pixels assigned to the segment, plus size/shape summaries.
  Degenerate statistical moments (zero variance, empty pixel sets) are 0.

The default full set has d = 36.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphValidationError, MaskError
from .graphs import IndividualGraph
from .skeleton import BinaryMask, KeyPointRef, TracedSegment

__all__ = [
    "FEATURE_MANIFEST_VERSION",
    "FeatureConfig",
    "SegmentTree",
    "build_segment_tree",
    "compute_features",
    "FeatureScaler",
    "fit_scaler",
]

FEATURE_MANIFEST_VERSION = 1

_TOPOLOGY_NAMES = ["deg_min", "deg_max"]
_POSITION_NAMES = [
    "pos_centroid_x",  # centerline centroid / (W-1)
    "pos_centroid_y",  # centerline centroid / (H-1)
    "pos_prox_x",  # proximal key point / (W-1)
    "pos_prox_y",
    "pos_dist_x",  # distal key point / (W-1)
    "pos_dist_y",
    "pos_depth",  # hop depth from root segment / max depth
    "pos_root_gap",  # euclidean(proximal, root point) / image diagonal
    "pos_len_tree",  # centerline length / total tree length
    "pos_len_image",  # centerline length / image diagonal
    "pos_dir_sin",  # (1 + sin(chord angle)) / 2
    "pos_dir_cos",  # (1 + cos(chord angle)) / 2
    "pos_root_path",  # along-tree distance root -> proximal / total tree length
    "pos_descendants",  # descendant segments / (n - 1)
    "pos_bbox_w",  # centerline bbox width / (W-1)
    "pos_bbox_h",
    "pos_width",  # (area / centerline length) / max over this graph
    "pos_leaf",  # 1 if the distal key point has degree 1
    "pos_siblings",  # (deg(proximal) - 1) / max key-point degree
    "pos_subtree",  # subtree height / max subtree height
]
_INTENSITY_NAMES = [
    "int_mean",
    "int_std",
    "int_min",
    "int_max",
    "int_median",
    "int_skew",
    "int_kurtosis",
    "int_energy",  # mean of squared intensities
    "int_entropy",  # 32-bin shannon entropy / 5 bits
    "shp_area",  # mask pixels assigned to the segment
    "shp_length",  # centerline geometric length
    "shp_tortuosity",  # centerline length / chord length
    "shp_aspect",  # (min+1)/(max+1) of the area bounding box sides
    "shp_fill",  # area / bounding-box area
]


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature groups to compute; ``dim`` is the resulting d."""

    topology: bool = True
    position: bool = True
    intensity: bool = True

    @property
    def dim(self) -> int:
        return (
            2 * int(self.topology)
            + 20 * int(self.position)
            + 14 * int(self.intensity)
        )

    def feature_names(self) -> list[str]:
        names: list[str] = []
        if self.topology:
            names += _TOPOLOGY_NAMES
        if self.position:
            names += _POSITION_NAMES
        if self.intensity:
            names += _INTENSITY_NAMES
        return names


@dataclass
class SegmentTree:
    """Traced segments plus the tree context shared by all feature groups.

    ``owned_pixels[k]`` lists the centerline pixels attributed to segment k
    alone (junction pixels are excluded / deduplicated by the producer).
    """

    segments: list[TracedSegment]
    root_ref: KeyPointRef
    owned_pixels: list[list[tuple[int, int]]]
    edges: list[tuple[int, int]] = field(default_factory=list)
    proximal: list[KeyPointRef] = field(default_factory=list)
    distal: list[KeyPointRef] = field(default_factory=list)
    kp_degree: dict = field(default_factory=dict)
    depth: list[int] = field(default_factory=list)
    root_segment: int = 0
    along_to_proximal: list[float] = field(default_factory=list)
    descendants: list[int] = field(default_factory=list)
    subtree_height: list[int] = field(default_factory=list)
    total_length: float = 0.0


def _loc_key(ref: KeyPointRef) -> tuple[float, float]:
    x, y = ref[1]
    return (float(y), float(x))


def build_segment_tree(
    segments: list[TracedSegment],
    root_ref: KeyPointRef,
    owned_pixels: list[list[tuple[int, int]]] | None = None,
) -> SegmentTree:
    """Orient the segments away from the root and derive tree context."""
    if not segments:
        raise GraphValidationError("cannot build a tree from zero segments")
    if owned_pixels is None:
        owned_pixels = [list(seg.pixels) for seg in segments]

    incident: dict[KeyPointRef, list[int]] = {}
    for k, seg in enumerate(segments):
        for ref in seg.ends:
            incident.setdefault(ref, []).append(k)
    if root_ref not in incident:
        raise GraphValidationError(f"root key point {root_ref} is not on any segment")
    kp_degree = {ref: len(ids) for ref, ids in incident.items()}

    edges = set()
    for ids in incident.values():
        for a in ids:
            for b in ids:
                if a < b:
                    edges.add((a, b))
    edges = sorted(edges)

    adjacency: dict[int, set[int]] = {k: set() for k in range(len(segments))}
    for a, b in edges:
        adjacency[a].add(b)
        adjacency[b].add(a)

    # connectivity over segments
    seen = {0}
    stack = [0]
    while stack:
        node = stack.pop()
        for nb in adjacency[node]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(segments):
        raise GraphValidationError(
            f"disconnected segment set: {len(segments) - len(seen)} segment(s) "
            "unreachable from the first"
        )

    # along-centerline distance over key points (Dijkstra, weights = arc length)
    dist: dict[KeyPointRef, float] = {root_ref: 0.0}
    heap: list[tuple[float, tuple, KeyPointRef]] = [(0.0, _loc_key(root_ref), root_ref)]
    done: set[KeyPointRef] = set()
    while heap:
        d, _, ref = heapq.heappop(heap)
        if ref in done:
            continue
        done.add(ref)
        for k in incident[ref]:
            seg = segments[k]
            other = seg.ends[1] if seg.ends[0] == ref else seg.ends[0]
            nd = d + seg.arc_length()
            if other not in dist or nd < dist[other] - 1e-12:
                dist[other] = nd
                heapq.heappush(heap, (nd, _loc_key(other), other))

    proximal: list[KeyPointRef] = []
    distal: list[KeyPointRef] = []
    along: list[float] = []
    for seg in segments:
        a, b = seg.ends
        da, db = dist.get(a, math.inf), dist.get(b, math.inf)
        if (da, _loc_key(a)) <= (db, _loc_key(b)):
            proximal.append(a)
            distal.append(b)
            along.append(da)
        else:
            proximal.append(b)
            distal.append(a)
            along.append(db)

    root_candidates = incident[root_ref]
    root_segment = min(root_candidates)

    depth = [-1] * len(segments)
    depth[root_segment] = 0
    frontier = [root_segment]
    while frontier:
        nxt = []
        for node in frontier:
            for nb in sorted(adjacency[node]):
                if depth[nb] < 0:
                    depth[nb] = depth[node] + 1
                    nxt.append(nb)
        frontier = nxt

    # children attach at the parent's distal key point, one level deeper
    children: dict[int, list[int]] = {k: [] for k in range(len(segments))}
    for k in range(len(segments)):
        for nb in sorted(adjacency[k]):
            if depth[nb] == depth[k] + 1 and proximal[nb] == distal[k]:
                children[k].append(nb)

    descendants = [0] * len(segments)
    subtree_height = [0] * len(segments)
    for k in sorted(range(len(segments)), key=lambda s: -depth[s]):
        for child in children[k]:
            descendants[k] += 1 + descendants[child]
            subtree_height[k] = max(subtree_height[k], 1 + subtree_height[child])

    return SegmentTree(
        segments=segments,
        root_ref=root_ref,
        owned_pixels=owned_pixels,
        edges=edges,
        proximal=proximal,
        distal=distal,
        kp_degree=kp_degree,
        depth=depth,
        root_segment=root_segment,
        along_to_proximal=along,
        descendants=descendants,
        subtree_height=subtree_height,
        total_length=float(sum(seg.arc_length() for seg in segments)),
    )


def _assign_mask_pixels(tree: SegmentTree, mask: BinaryMask) -> list[np.ndarray]:
    """Attribute every foreground mask pixel to the nearest owned centerline pixel.

    Returns, per segment, an array of (x, y) pixel coordinates.  Ties go to
    the earliest centerline pixel in (segment, path) order.
    """
    owners: list[int] = []
    points: list[tuple[int, int]] = []
    for k, pix in enumerate(tree.owned_pixels):
        for p in pix:
            owners.append(k)
            points.append(p)
    per_segment: list[list[tuple[int, int]]] = [[] for _ in tree.segments]
    ys, xs = np.nonzero(mask.bits)
    if points and len(ys):
        pts = np.asarray(points, dtype=np.float64)  # (x, y)
        fg = np.stack([xs, ys], axis=1).astype(np.float64)
        # block the distance computation to bound memory
        owner_arr = np.asarray(owners)
        for start in range(0, fg.shape[0], 4096):
            chunk = fg[start : start + 4096]
            d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argmin(d2, axis=1)
            for (x, y), idx in zip(chunk, nearest):
                per_segment[int(owner_arr[idx])].append((int(x), int(y)))
    return [np.asarray(sorted(p), dtype=np.int64).reshape(-1, 2) for p in per_segment]


def _chord(tree: SegmentTree, k: int) -> tuple[float, float]:
    (px, py) = tree.proximal[k][1]
    (dx, dy) = tree.distal[k][1]
    return (float(dx - px), float(dy - py))


def _moments(values: np.ndarray) -> tuple[float, float, float, float]:
    """mean, std, skewness, excess kurtosis; higher moments are 0 when std is 0."""
    mean = float(values.mean())
    centered = values - mean
    var = float((centered**2).mean())
    std = math.sqrt(var)
    if std < 1e-12:
        return mean, 0.0, 0.0, 0.0
    skew = float((centered**3).mean()) / std**3
    kurt = float((centered**4).mean()) / std**4 - 3.0
    return mean, std, skew, kurt


def _entropy(values: np.ndarray) -> float:
    hist, _ = np.histogram(values, bins=32, range=(0.0, 1.0))
    total = hist.sum()
    if total == 0:
        return 0.0
    p = hist[hist > 0] / total
    return float(-(p * np.log2(p)).sum() / 5.0)


def compute_features(
    tree: SegmentTree, mask: BinaryMask, config: FeatureConfig
) -> np.ndarray:
    """Feature matrix (n_segments x config.dim) in manifest order."""
    if config.dim == 0:
        raise GraphValidationError("feature config enables no groups")
    if config.intensity and mask.intensity is None:
        raise MaskError("intensity features enabled but the mask has no intensity plane")

    n = len(tree.segments)
    width, height = mask.width, mask.height
    diag = math.hypot(width - 1, height - 1) or 1.0
    wd = max(width - 1, 1)
    hd = max(height - 1, 1)
    max_depth = max(tree.depth) or 1
    max_height_ = max(tree.subtree_height) or 1
    max_deg = max(tree.kp_degree.values()) or 1
    total_len = tree.total_length or 1.0
    root_x, root_y = tree.root_ref[1]

    lengths = [seg.arc_length() for seg in tree.segments]
    areas_needed = config.position or config.intensity
    assigned = _assign_mask_pixels(tree, mask) if areas_needed else [None] * n
    areas = [float(a.shape[0]) if a is not None else 0.0 for a in assigned]
    width_proxies = [
        (areas[k] / lengths[k]) if lengths[k] > 1e-9 and areas[k] > 0 else 0.0
        for k in range(n)
    ]
    max_width_proxy = max(width_proxies) or 1.0

    rows: list[list[float]] = []
    for k, seg in enumerate(tree.segments):
        row: list[float] = []
        deg_p = tree.kp_degree[tree.proximal[k]]
        deg_d = tree.kp_degree[tree.distal[k]]
        if config.topology:
            row += [float(min(deg_p, deg_d)), float(max(deg_p, deg_d))]

        if config.position:
            pix = np.asarray(seg.pixels, dtype=np.float64)
            cx, cy = float(pix[:, 0].mean()), float(pix[:, 1].mean())
            (px, py) = tree.proximal[k][1]
            (dx_, dy_) = tree.distal[k][1]
            chord_x, chord_y = _chord(tree, k)
            chord_len = math.hypot(chord_x, chord_y)
            angle = math.atan2(chord_y, chord_x) if chord_len > 1e-9 else 0.0
            bbox_w = float(pix[:, 0].max() - pix[:, 0].min())
            bbox_h = float(pix[:, 1].max() - pix[:, 1].min())
            row += [
                cx / wd,
                cy / hd,
                float(px) / wd,
                float(py) / hd,
                float(dx_) / wd,
                float(dy_) / hd,
                tree.depth[k] / max_depth,
                math.hypot(px - root_x, py - root_y) / diag,
                lengths[k] / total_len,
                lengths[k] / diag,
                (1.0 + math.sin(angle)) / 2.0,
                (1.0 + math.cos(angle)) / 2.0,
                tree.along_to_proximal[k] / total_len,
                tree.descendants[k] / max(n - 1, 1),
                bbox_w / wd,
                bbox_h / hd,
                width_proxies[k] / max_width_proxy,
                1.0 if deg_d == 1 else 0.0,
                (deg_p - 1) / max_deg,
                tree.subtree_height[k] / max_height_,
            ]

        if config.intensity:
            pts = assigned[k]
            if pts is not None and pts.shape[0]:
                vals = mask.intensity[pts[:, 1], pts[:, 0]].astype(np.float64) / 255.0
                mean, std, skew, kurt = _moments(vals)
                vmin, vmax = float(vals.min()), float(vals.max())
                median = float(np.median(vals))
                energy = float((vals**2).mean())
                entropy = _entropy(vals)
                area_w = float(pts[:, 0].max() - pts[:, 0].min())
                area_h = float(pts[:, 1].max() - pts[:, 1].min())
                aspect = (min(area_w, area_h) + 1.0) / (max(area_w, area_h) + 1.0)
                fill = areas[k] / ((area_w + 1.0) * (area_h + 1.0))
            else:
                mean = std = skew = kurt = vmin = vmax = median = energy = entropy = 0.0
                aspect = fill = 0.0
            chord_x, chord_y = _chord(tree, k)
            chord_len = math.hypot(chord_x, chord_y)
            tortuosity = lengths[k] / chord_len if chord_len > 1e-9 else 1.0
            row += [
                mean,
                std,
                vmin,
                vmax,
                median,
                skew,
                kurt,
                energy,
                entropy,
                areas[k],
                lengths[k],
                tortuosity,
                aspect,
                fill,
            ]
        rows.append(row)
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# min-max normalization record
# ---------------------------------------------------------------------------


@dataclass
class FeatureScaler:
    """Per-channel min-max record fitted on the training set only."""

    lo: np.ndarray
    hi: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        span = self.hi - self.lo
        flat = span <= 0
        safe = np.where(flat, 1.0, span)
        scaled = (features - self.lo) / safe
        scaled[:, flat] = 0.5  # zero-range channels pass through as 0.5
        return np.clip(scaled, 0.0, 1.0)

    def apply_graph(self, g: IndividualGraph) -> IndividualGraph:
        return g.with_features(self.apply(g.feature_matrix()))


def fit_scaler(graphs: list[IndividualGraph]) -> FeatureScaler:
    if not graphs:
        raise GraphValidationError("cannot fit a feature scaler on zero graphs")
    stacked = np.vstack([g.feature_matrix() for g in graphs])
    return FeatureScaler(lo=stacked.min(axis=0), hi=stacked.max(axis=0))
