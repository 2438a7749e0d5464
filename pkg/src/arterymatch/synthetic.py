"""Seeded generator of labeled coronary-tree cases.

Anatomy grammar: a root inlet segment (LMA) descends from the image top and
bifurcates into two main chains, LAD (drifting left) and LCX (drifting
right).  Side branches split the chains: each diagonal (D) attaches at an
internal junction of the LAD chain, each obtuse marginal (OM) at one of the
LCX chain, so a chain of k segments carries exactly k-1 side branches.
Labels carry increasing indices along the blood flow (LAD1, LAD2, ..., D1,
D2, ... by attachment distance from the root).

The geometric layout is a set of 2-D polylines with seeded jitter.  RAO view
cases are mirrored horizontally.  The rasterizer strokes the polylines with
the configured width and synthesizes an intensity plane: contrast decays
linearly with along-tree distance (dye dissipation) plus seeded Gaussian
noise, clipped to [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MaskError
from .features import FEATURE_MANIFEST_VERSION, FeatureConfig, build_segment_tree, compute_features
from .graphs import GraphNode, IndividualGraph, SemanticLabel
from .rng import stream
from .skeleton import BinaryMask, KeyPointRef, TracedSegment

__all__ = [
    "TreeGrammarConfig",
    "TreeLayout",
    "Polyline",
    "SyntheticCase",
    "generate_tree",
    "rasterize_mask",
    "generate_case",
    "pixelize_polyline",
]


@dataclass(frozen=True)
class TreeGrammarConfig:
    lad_segments: tuple[int, int] = (1, 4)  # chain length range
    lcx_segments: tuple[int, int] = (1, 4)
    d_branch_prob: float = 0.55  # per potential attachment site
    om_branch_prob: float = 0.55
    jitter: float = 2.5  # px of perpendicular waviness
    vessel_width: tuple[float, float] = (2.5, 4.5)
    image_size: tuple[int, int] = (192, 192)  # (width, height)
    lao_prob: float = 0.5
    base_contrast: float = 215.0
    distal_falloff: float = 0.45  # fraction of contrast lost at the farthest tip
    noise_std: float = 5.0

    def __post_init__(self):
        for name in ("d_branch_prob", "om_branch_prob", "lao_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise MaskError(f"{name} must be in [0,1], got {p}")
        for name in ("lad_segments", "lcx_segments", "vessel_width"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise MaskError(f"{name} range is empty: {lo}..{hi}")


@dataclass
class Polyline:
    """One arterial segment of the layout."""

    points: list[tuple[float, float]]
    label: SemanticLabel
    ends: tuple[KeyPointRef, KeyPointRef]  # (proximal, distal) by construction

    def length(self) -> float:
        return float(
            sum(
                math.hypot(x1 - x0, y1 - y0)
                for (x0, y0), (x1, y1) in zip(self.points, self.points[1:])
            )
        )


@dataclass
class TreeLayout:
    polylines: list[Polyline]
    root_point: tuple[float, float]
    view_angle: str
    seed: int
    start_distance: list[float] = field(default_factory=list)  # along-tree at proximal end


@dataclass
class SyntheticCase:
    graph: IndividualGraph
    mask: BinaryMask
    layout: TreeLayout
    segments: list[TracedSegment]
    seed: int


def _chain_length(rng: np.random.Generator, bounds: tuple[int, int], prob: float) -> int:
    lo, hi = bounds
    sites = max(hi - 1, 0)
    active = int(rng.binomial(sites, prob)) if sites else 0
    return int(min(max(active + 1, lo), hi))


def _rot(angle: float, length: float) -> tuple[float, float]:
    return (length * math.cos(angle), length * math.sin(angle))


def _wavy(
    start: tuple[float, float],
    end: tuple[float, float],
    rng_offsets: list[float],
) -> list[tuple[float, float]]:
    """Interior points displaced perpendicular to the chord, ends exact."""
    (x0, y0), (x1, y1) = start, end
    chord = math.hypot(x1 - x0, y1 - y0)
    if chord < 1e-9:
        return [start, end]
    nx, ny = -(y1 - y0) / chord, (x1 - x0) / chord
    points = [start]
    m = len(rng_offsets)
    for i, off in enumerate(rng_offsets, start=1):
        t = i / (m + 1)
        bulge = math.sin(math.pi * t)
        points.append(
            (
                x0 + t * (x1 - x0) + nx * off * bulge,
                y0 + t * (y1 - y0) + ny * off * bulge,
            )
        )
    points.append(end)
    return points


def generate_tree(cfg: TreeGrammarConfig, seed: int) -> TreeLayout:
    """Grammar plus geometry; deterministic per (cfg, seed)."""
    rng = stream(seed, "synth", "tree")
    width, height = cfg.image_size
    view = "LAO" if rng.random() < cfg.lao_prob else "RAO"

    n_lad = _chain_length(rng, cfg.lad_segments, cfg.d_branch_prob)
    n_lcx = _chain_length(rng, cfg.lcx_segments, cfg.om_branch_prob)

    # draw every random quantity once, then lay out with a shrinking scale
    # until all points fit inside the margin box
    lma_angle = math.radians(90 + rng.uniform(-6, 6))
    lma_len = height * rng.uniform(0.10, 0.14)
    lad_angles = [math.radians(118 + rng.uniform(-8, 8))]
    lcx_angles = [math.radians(55 + rng.uniform(-8, 8))]
    for _ in range(1, n_lad):
        lad_angles.append(lad_angles[-1] + math.radians(rng.uniform(-12, 4)))
    for _ in range(1, n_lcx):
        lcx_angles.append(lcx_angles[-1] + math.radians(rng.uniform(-4, 12)))
    lad_lens = [height * rng.uniform(0.14, 0.19) * (0.88**i) for i in range(n_lad)]
    lcx_lens = [height * rng.uniform(0.14, 0.19) * (0.88**i) for i in range(n_lcx)]
    d_angles = [lad_angles[i] + math.radians(rng.uniform(38, 55)) for i in range(max(n_lad - 1, 0))]
    d_lens = [height * rng.uniform(0.11, 0.16) * (0.9**i) for i in range(max(n_lad - 1, 0))]
    om_angles = [lcx_angles[i] - math.radians(rng.uniform(38, 55)) for i in range(max(n_lcx - 1, 0))]
    om_lens = [height * rng.uniform(0.11, 0.16) * (0.9**i) for i in range(max(n_lcx - 1, 0))]
    margin = cfg.vessel_width[1] + cfg.jitter + 2.0
    root = (
        width * rng.uniform(0.46, 0.54),
        margin + height * rng.uniform(0.005, 0.035),  # catheter enters near the top
    )
    wiggles = {
        key: [rng.uniform(-cfg.jitter, cfg.jitter) for _ in range(2)]
        for key in ["LMA"]
        + [f"LAD{i}" for i in range(n_lad)]
        + [f"LCX{i}" for i in range(n_lcx)]
        + [f"D{i}" for i in range(max(n_lad - 1, 0))]
        + [f"OM{i}" for i in range(max(n_lcx - 1, 0))]
    }

    def layout(scale: float) -> list[Polyline]:
        def endpoint(p, angle, length):
            dx, dy = _rot(angle, length * scale)
            return (p[0] + dx, p[1] + dy)

        polylines: list[Polyline] = []

        def ref(kind: str, p) -> KeyPointRef:
            return (kind, (float(p[0]), float(p[1])))

        j0 = endpoint(root, lma_angle, lma_len)
        polylines.append(
            Polyline(
                _wavy(root, j0, wiggles["LMA"]),
                SemanticLabel("LMA"),
                (ref("endpoint", root), ref("junction", j0) if (n_lad + n_lcx) else ref("endpoint", j0)),
            )
        )

        def chain(base: str, side: str, start, angles, lens, b_angles, b_lens):
            p = start
            for i in range(len(angles)):
                q = endpoint(p, angles[i], lens[i])
                last = i == len(angles) - 1
                end_kind = "endpoint" if last else "junction"
                polylines.append(
                    Polyline(
                        _wavy(p, q, wiggles[f"{base}{i}"]),
                        SemanticLabel(base, i + 1),
                        (ref("junction", p), ref(end_kind, q)),
                    )
                )
                if not last:
                    tip = endpoint(q, b_angles[i], b_lens[i])
                    polylines.append(
                        Polyline(
                            _wavy(q, tip, wiggles[f"{side}{i}"]),
                            SemanticLabel(side, i + 1),
                            (ref("junction", q), ref("endpoint", tip)),
                        )
                    )
                p = q

        chain("LAD", "D", j0, lad_angles, lad_lens, d_angles, d_lens)
        chain("LCX", "OM", j0, lcx_angles, lcx_lens, om_angles, om_lens)
        return polylines

    scale = 1.0
    for _ in range(24):
        polylines = layout(scale)
        xs = [x for poly in polylines for x, _ in poly.points]
        ys = [y for poly in polylines for _, y in poly.points]
        if (
            min(xs) >= margin
            and min(ys) >= margin
            and max(xs) <= width - 1 - margin
            and max(ys) <= height - 1 - margin
        ):
            break
        scale *= 0.88
    else:
        raise MaskError("layout does not fit the image even after shrinking")

    if view == "RAO":  # mirrored acquisition
        def flip(p):
            return (float(width - 1) - p[0], p[1])

        for poly in polylines:
            poly.points = [flip(p) for p in poly.points]
            poly.ends = tuple((kind, flip(loc)) for kind, loc in poly.ends)  # type: ignore[assignment]
        root_point = flip(root)
    else:
        root_point = (float(root[0]), float(root[1]))

    tree = TreeLayout(polylines=polylines, root_point=root_point, view_angle=view, seed=seed)
    tree.start_distance = _start_distances(tree)
    return tree


def _start_distances(layout: TreeLayout) -> list[float]:
    """Along-tree distance from the root to each polyline's proximal end."""
    dist: dict[tuple[float, float], float] = {layout.root_point: 0.0}
    starts = [0.0] * len(layout.polylines)
    pending = set(range(len(layout.polylines)))
    while pending:
        progressed = False
        for k in sorted(pending):
            poly = layout.polylines[k]
            p0 = poly.ends[0][1]
            if p0 in dist:
                starts[k] = dist[p0]
                p1 = poly.ends[1][1]
                reach = dist[p0] + poly.length()
                if p1 not in dist or reach < dist[p1]:
                    dist[p1] = reach
                pending.discard(k)
                progressed = True
        if not progressed:
            raise MaskError("layout polylines do not form a rooted tree")
    return starts


def pixelize_polyline(points: list[tuple[float, float]]) -> list[tuple[int, int]]:
    """Ordered, deduplicated Bresenham pixels along the polyline."""
    pixels: list[tuple[int, int]] = []
    rounded = [(int(round(x)), int(round(y))) for x, y in points]
    for (x0, y0), (x1, y1) in zip(rounded, rounded[1:]):
        dx, dy = abs(x1 - x0), abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx - dy
        x, y = x0, y0
        while True:
            if not pixels or pixels[-1] != (x, y):
                pixels.append((x, y))
            if (x, y) == (x1, y1):
                break
            e2 = 2 * err
            if e2 > -dy:
                err -= dy
                x += sx
            if e2 < dx:
                err += dx
                y += sy
    if not pixels and rounded:
        pixels = [rounded[0]]
    return pixels


def rasterize_mask(layout: TreeLayout, cfg: TreeGrammarConfig) -> BinaryMask:
    """Stroke the polylines; intensity decays with along-tree distance."""
    width, height = cfg.image_size
    for poly in layout.polylines:
        for x, y in poly.points:
            if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
                raise MaskError(
                    f"polyline point ({x:.1f},{y:.1f}) is outside the "
                    f"{width}x{height} image"
                )
    rng = stream(layout.seed, "synth", "raster")
    stroke_width = float(rng.uniform(*cfg.vessel_width))
    bits = np.zeros((height, width), dtype=bool)
    dist_map = np.full((height, width), np.inf)

    total = sum(poly.length() for poly in layout.polylines) or 1.0

    for k, poly in enumerate(layout.polylines):
        depth_w = max(stroke_width - 0.35 * _label_depth(poly.label), 1.0)
        radius = depth_w / 2.0
        along = layout.start_distance[k]
        if depth_w <= 1.0:
            for x, y in pixelize_polyline(poly.points):
                bits[y, x] = True
                dist_map[y, x] = min(dist_map[y, x], along)
            continue
        for (x0, y0), (x1, y1) in zip(poly.points, poly.points[1:]):
            steplen = math.hypot(x1 - x0, y1 - y0)
            n = max(int(steplen / 0.5), 1)
            for i in range(n + 1):
                t = i / n
                cx, cy = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
                d_here = along + t * steplen
                r = int(math.ceil(radius))
                for yy in range(int(cy) - r, int(cy) + r + 1):
                    for xx in range(int(cx) - r, int(cx) + r + 1):
                        if 0 <= yy < height and 0 <= xx < width:
                            if (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2:
                                bits[yy, xx] = True
                                dist_map[yy, xx] = min(dist_map[yy, xx], d_here)
            along += steplen

    noise = rng.normal(0.0, cfg.noise_std, size=bits.shape)
    frac = np.where(np.isfinite(dist_map), dist_map / total, 0.0)
    level = cfg.base_contrast * (1.0 - cfg.distal_falloff * frac) + noise
    intensity = np.where(bits, np.clip(level, 0.0, 255.0), 0.0).astype(np.uint8)
    return BinaryMask(bits=bits, intensity=intensity)


def _label_depth(label: SemanticLabel) -> int:
    if label.base == "LMA":
        return 0
    if label.base in ("LAD", "LCX"):
        return label.index
    return label.index + 1  # side branches are one level past their junction


def generate_case(
    cfg: TreeGrammarConfig, seed: int, feature_config: FeatureConfig | None = None
) -> SyntheticCase:
    """Layout + raster + features -> a fully labeled case."""
    feature_config = feature_config or FeatureConfig()
    layout = generate_tree(cfg, seed)
    mask = rasterize_mask(layout, cfg)

    segments: list[TracedSegment] = []
    claimed: set[tuple[int, int]] = set()
    owned: list[list[tuple[int, int]]] = []
    for poly in layout.polylines:
        pixels = pixelize_polyline(poly.points)
        segments.append(TracedSegment(pixels, poly.ends, n_arc_pixels=len(pixels)))
        mine = [p for p in pixels if p not in claimed]
        claimed.update(mine)
        owned.append(mine)

    root_ref: KeyPointRef = ("endpoint", layout.root_point)
    tree = build_segment_tree(segments, root_ref, owned)
    feats = compute_features(tree, mask, feature_config)
    nodes = [
        GraphNode(
            id=k,
            features=feats[k],
            key_points=(
                (float(tree.proximal[k][1][0]), float(tree.proximal[k][1][1])),
                (float(tree.distal[k][1][0]), float(tree.distal[k][1][1])),
            ),
            label=layout.polylines[k].label,
        )
        for k in range(len(segments))
    ]
    graph = IndividualGraph(
        nodes=nodes,
        edges=set(tree.edges),
        view_angle=layout.view_angle,
        root_node_id=tree.root_segment,
        feature_manifest_version=FEATURE_MANIFEST_VERSION,
    )
    return SyntheticCase(graph=graph, mask=mask, layout=layout, segments=segments, seed=seed)
