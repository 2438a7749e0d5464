"""Binary mask -> centerline -> key points -> traced segments.

Thinning is sequential simple-point boundary peeling: a foreground pixel may
be deleted only if the deletion provably preserves local topology (one
8-connected foreground component and one 4-connected background component in
its 3x3 ring) and it is not an endpoint.  That makes the skeleton 1 pixel
wide, keeps the connected-component count of the input, and is idempotent on
already-thin input.

Coordinates in public structures are (x, y) pixel positions; arrays are
indexed [y, x].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MaskError

__all__ = [
    "BinaryMask",
    "Centerline",
    "KeyPoints",
    "KeyPointRef",
    "TracedSegment",
    "thin_mask",
    "detect_key_points",
    "trace_segments",
    "count_components",
]

_EIGHT = np.ones((3, 3), dtype=int)

# ring positions, clockwise from north; bit k of a configuration = ring[k]
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


@dataclass
class BinaryMask:
    """Foreground bitmap with an optional same-shape 8-bit intensity plane."""

    bits: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2 or 0 in self.bits.shape:
            raise MaskError(f"mask must be a non-empty 2-D bitmap, got shape {self.bits.shape}")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.uint8)
            if self.intensity.shape != self.bits.shape:
                raise MaskError(
                    f"intensity plane shape {self.intensity.shape} does not match "
                    f"mask shape {self.bits.shape}"
                )

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])


@dataclass
class Centerline:
    """1-pixel-wide skeleton as a bitmap (8-connectivity)."""

    pixels: np.ndarray  # bool, same shape as the source mask

    def pixel_list(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.pixels)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]


KeyPointRef = tuple[str, tuple[float, float]]  # ("endpoint"|"junction", (x, y))


@dataclass
class KeyPoints:
    endpoints: list[tuple[int, int]]
    bifurcations: list[tuple[float, float]]  # junction-cluster centroids
    clusters: list[list[tuple[int, int]]]  # pixels of each junction cluster


@dataclass
class TracedSegment:
    """Ordered pixel path between two key points.

    ``pixels`` includes one attachment pixel of each adjacent junction
    cluster; ``n_arc_pixels`` counts only the segment's own (non-junction)
    pixels, which is what spur pruning measures.
    """

    pixels: list[tuple[int, int]]
    ends: tuple[KeyPointRef, KeyPointRef]
    n_arc_pixels: int = 0

    def arc_length(self) -> float:
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.pixels, self.pixels[1:]):
            total += float(np.hypot(x1 - x0, y1 - y0))
        return total


def _build_simple_lut() -> np.ndarray:
    """simple[config] == True when deleting the center preserves topology."""
    lut = np.zeros(256, dtype=bool)
    for config in range(256):
        ring = [(config >> k) & 1 for k in range(8)]
        fg = [i for i in range(8) if ring[i]]
        bg = [i for i in range(8) if not ring[i]]
        if not fg:
            continue

        def adjacency(members, four_only):
            adj = {m: set() for m in members}
            for a in members:
                ya, xa = _RING[a]
                for b in members:
                    if a == b:
                        continue
                    yb, xb = _RING[b]
                    dy, dx = abs(ya - yb), abs(xa - xb)
                    if four_only:
                        if dy + dx == 1:
                            adj[a].add(b)
                    elif max(dy, dx) == 1:
                        adj[a].add(b)
            return adj

        def components(members, adj):
            remaining = set(members)
            count = 0
            comps = []
            while remaining:
                count += 1
                start = remaining.pop()
                comp = {start}
                stack = [start]
                while stack:
                    node = stack.pop()
                    for nb in adj[node]:
                        if nb in remaining:
                            remaining.discard(nb)
                            comp.add(nb)
                            stack.append(nb)
                comps.append(comp)
            return comps

        fg_comps = components(fg, adjacency(fg, four_only=False))
        bg_comps = components(bg, adjacency(bg, four_only=True))
        # background components must touch a 4-neighbor of the center
        four_positions = {0, 2, 4, 6}
        bg_touching = [c for c in bg_comps if c & four_positions]
        lut[config] = len(fg_comps) == 1 and len(bg_touching) == 1
    return lut


_SIMPLE = _build_simple_lut()


def _neighbor_config(img: np.ndarray, y: int, x: int) -> tuple[int, int]:
    """(bitmask, neighbor count) of the 8-ring around (y, x)."""
    h, w = img.shape
    config = 0
    count = 0
    for k, (dy, dx) in enumerate(_RING):
        ny, nx = y + dy, x + dx
        if 0 <= ny < h and 0 <= nx < w and img[ny, nx]:
            config |= 1 << k
            count += 1
    return config, count


def count_components(bits: np.ndarray) -> int:
    return int(ndimage.label(bits, structure=_EIGHT)[1])


def thin_mask(mask: BinaryMask) -> Centerline:
    """Peel the mask down to a 1-pixel-wide, topology-preserving centerline."""
    img = mask.bits.copy()
    if not img.any():
        raise MaskError("cannot thin an empty mask (no foreground pixels)")
    directions = [(-1, 0), (1, 0), (0, -1), (0, 1)]  # peel N, S, W, E borders
    changed = True
    while changed:
        changed = False
        for dy, dx in directions:
            border = img & ~_padded_shift(img, dy, dx)
            ys, xs = np.nonzero(border)
            for y, x in zip(ys, xs):
                if not img[y, x]:
                    continue
                config, count = _neighbor_config(img, y, x)
                if count >= 2 and _SIMPLE[config]:
                    img[y, x] = False
                    changed = True
    return Centerline(img)


def _padded_shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """img shifted by (dy, dx) with False padding (value of the neighbor there)."""
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = img[max(0, dy) : min(h, h + dy), max(0, dx) : min(w, w + dx)]
    return out


def detect_key_points(
    centerline: Centerline, forced_junctions: set[tuple[int, int]] | None = None
) -> KeyPoints:
    """Classify skeleton pixels by neighbor count; merge adjacent junctions.

    ``forced_junctions`` marks extra pixels as junction pixels regardless of
    their neighbor count (used to absorb short junction-to-junction bridges).
    """
    img = centerline.pixels
    forced = forced_junctions or set()
    ys, xs = np.nonzero(img)
    endpoints: list[tuple[int, int]] = []
    junction = np.zeros_like(img)
    for y, x in zip(ys, xs):
        if (int(x), int(y)) in forced:
            junction[y, x] = True
            continue
        _, count = _neighbor_config(img, y, x)
        if count == 1:
            endpoints.append((int(x), int(y)))
        elif count >= 3:
            junction[y, x] = True
    labels, n_clusters = ndimage.label(junction, structure=_EIGHT)
    clusters: list[list[tuple[int, int]]] = []
    centroids: list[tuple[float, float]] = []
    for cid in range(1, n_clusters + 1):
        cy, cx = np.nonzero(labels == cid)
        pix = sorted((int(x), int(y)) for y, x in zip(cy, cx))
        clusters.append(pix)
        centroids.append((float(np.mean([p[0] for p in pix])), float(np.mean([p[1] for p in pix]))))
    order = sorted(range(n_clusters), key=lambda k: clusters[k][0])
    return KeyPoints(
        endpoints=sorted(endpoints),
        bifurcations=[centroids[k] for k in order],
        clusters=[clusters[k] for k in order],
    )


def _neighbors_of(pixel: tuple[int, int], pixel_set: set[tuple[int, int]]) -> list[tuple[int, int]]:
    x, y = pixel
    out = []
    for dy, dx in _RING:
        q = (x + dx, y + dy)
        if q in pixel_set:
            out.append(q)
    return out


def _trace_once(pixel_set: set[tuple[int, int]], keypoints: KeyPoints) -> list[TracedSegment]:
    cluster_of: dict[tuple[int, int], int] = {}
    for cid, pix in enumerate(keypoints.clusters):
        for p in pix:
            cluster_of[p] = cid
    junction_pixels = set(cluster_of)
    arc_pixels = pixel_set - junction_pixels

    def junction_ref(cid: int) -> KeyPointRef:
        return ("junction", keypoints.bifurcations[cid])

    def adjacent_clusters(p: tuple[int, int]) -> list[int]:
        cids = {cluster_of[q] for q in _neighbors_of(p, junction_pixels)}
        # nearest cluster first (a terminal wedged between two clusters)
        def dist(cid: int) -> float:
            cx, cy = keypoints.bifurcations[cid]
            return float(np.hypot(p[0] - cx, p[1] - cy))

        return sorted(cids, key=lambda cid: (dist(cid), cid))

    def attachment(terminal: tuple[int, int], cid: int) -> tuple[int, int] | None:
        pix = [q for q in _neighbors_of(terminal, junction_pixels) if cluster_of[q] == cid]
        return min(pix) if pix else None

    remaining = set(arc_pixels)
    segments: list[TracedSegment] = []
    for start in sorted(arc_pixels):
        if start not in remaining:
            continue
        comp = {start}
        stack = [start]
        remaining.discard(start)
        while stack:
            p = stack.pop()
            for q in _neighbors_of(p, remaining):
                remaining.discard(q)
                comp.add(q)
                stack.append(q)
        terminals = sorted(p for p in comp if len(_neighbors_of(p, comp)) <= 1)
        if not terminals:  # cycle without junctions; open at canonical pixel
            terminals = [min(comp, key=lambda p: (p[1], p[0]))]
        path = [terminals[0]]
        visited = {terminals[0]}
        while True:
            nxt = [q for q in _neighbors_of(path[-1], comp) if q not in visited]
            if not nxt:
                break
            nxt.sort()
            path.append(nxt[0])
            visited.add(nxt[0])

        first_cids = adjacent_clusters(path[0])
        last_cids = adjacent_clusters(path[-1])
        if len(path) == 1:
            if len(first_cids) >= 2:  # single pixel bridging two clusters
                pick = (first_cids[0], first_cids[1])
            elif len(first_cids) == 1:  # 1-pixel leaf poking off a junction
                pick = (None, first_cids[0])
            else:
                pick = (None, None)
        else:
            pick = (
                first_cids[0] if first_cids else None,
                last_cids[0] if last_cids else None,
            )

        ends: list[KeyPointRef] = []
        full_path = list(path)
        for side, (terminal, cid) in enumerate(zip((path[0], path[-1]), pick)):
            if cid is None:
                ends.append(("endpoint", (float(terminal[0]), float(terminal[1]))))
                continue
            ends.append(junction_ref(cid))
            att = attachment(terminal, cid)
            if att is not None:
                full_path = [att] + full_path if side == 0 else full_path + [att]
        segments.append(TracedSegment(full_path, (ends[0], ends[1]), n_arc_pixels=len(path)))

    # a cluster with no incident arcs (blob reduced to a pure junction
    # cluster) still has to cover its pixels
    used = {loc for seg in segments for kind, loc in seg.ends if kind == "junction"}
    for cid, pix in enumerate(keypoints.clusters):
        if keypoints.bifurcations[cid] not in used:
            ref = junction_ref(cid)
            segments.append(TracedSegment(list(pix), (ref, ref), n_arc_pixels=0))
    return segments


def trace_segments(
    centerline: Centerline,
    keypoints: KeyPoints,
    prune_len: int = 5,
    junction_merge_len: int = 4,
) -> list[TracedSegment]:
    """Split the skeleton into key-point-to-key-point paths.

    Two cleanup rules run until stable, recomputing key points after each
    round: leaf arcs shorter than ``prune_len`` pixels (thinning spurs) are
    removed, and junction-to-junction arcs shorter than ``junction_merge_len``
    (junction meshes left by thinning) are absorbed into a single merged
    junction cluster.
    """
    pixel_set = {(int(x), int(y)) for x, y in zip(*_coords(centerline.pixels))}
    forced: set[tuple[int, int]] = set()
    kps = keypoints
    while True:
        segments = _trace_once(pixel_set, kps)
        spurs = [
            seg
            for seg in segments
            if len(segments) > 1 and seg.n_arc_pixels < prune_len and _is_leaf_arc(seg)
        ]
        bridges = [
            seg
            for seg in segments
            if seg.n_arc_pixels
            and seg.n_arc_pixels < junction_merge_len
            and seg.ends[0][0] == "junction"
            and seg.ends[1][0] == "junction"
        ]
        if not spurs and not bridges:
            return segments
        for seg in spurs:
            for p in _arc_pixels_of(seg):
                pixel_set.discard(p)
                forced.discard(p)
        for seg in bridges:
            for p in _arc_pixels_of(seg):
                if p in pixel_set:
                    forced.add(p)
        img = np.zeros_like(centerline.pixels)
        for x, y in pixel_set:
            img[y, x] = True
        kps = detect_key_points(Centerline(img), forced_junctions=forced)


def _coords(bits: np.ndarray):
    ys, xs = np.nonzero(bits)
    return xs, ys


def _is_leaf_arc(seg: TracedSegment) -> bool:
    kinds = sorted(kind for kind, _ in seg.ends)
    return kinds == ["endpoint", "junction"]


def _arc_pixels_of(seg: TracedSegment) -> list[tuple[int, int]]:
    """The segment's own pixels, excluding junction attachment pixels."""
    start = 1 if seg.ends[0][0] == "junction" else 0
    return seg.pixels[start : start + seg.n_arc_pixels]
