"""Individual and association graph data model.

An individual graph describes one vascular tree: nodes are arterial segments
(with a feature vector and the two key points bounding the segment), edges
join segments that share a key point.  An association graph is the product of
two individual graphs: one vertex per candidate node pair, with features
formed by concatenation, and one edge per co-present pair of individual
edges.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

import numpy as np

from .errors import FileFormatError, GraphValidationError, LabelError

__all__ = [
    "BASE_CLASSES",
    "VIEW_ANGLES",
    "SemanticLabel",
    "GraphNode",
    "IndividualGraph",
    "AssociationGraph",
    "validate_graph",
    "build_association_graph",
    "ground_truth_assignment",
    "graph_to_json",
    "graph_from_json",
    "save_graph",
    "load_graph",
]

BASE_CLASSES = ("LMA", "LAD", "LCX", "D", "OM")
VIEW_ANGLES = ("LAO", "RAO")

GRAPH_FORMAT_VERSION = 1

_LABEL_RE = re.compile(r"^(LMA|LAD|LCX|D|OM)(\d*)$")


@dataclass(frozen=True, order=True)
class SemanticLabel:
    """Arterial class plus a split index (0 = unindexed, e.g. plain 'LAD')."""

    base: str
    index: int = 0

    def __post_init__(self):
        if self.base not in BASE_CLASSES:
            raise LabelError(f"unknown artery class {self.base!r}")
        if self.index < 0:
            raise LabelError(f"negative label index {self.index}")

    def merged(self) -> str:
        """Drop the split index: LAD2 -> LAD."""
        return self.base

    def __str__(self) -> str:
        return self.base if self.index == 0 else f"{self.base}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "SemanticLabel":
        m = _LABEL_RE.match(text)
        if not m:
            raise LabelError(f"malformed label {text!r}")
        return cls(m.group(1), int(m.group(2)) if m.group(2) else 0)


@dataclass
class GraphNode:
    """One arterial segment: features plus the key points bounding it."""

    id: int
    features: np.ndarray
    key_points: tuple[tuple[float, float], tuple[float, float]]
    label: SemanticLabel | None = None


@dataclass
class IndividualGraph:
    """Attributed undirected graph of one vascular tree."""

    nodes: list[GraphNode]
    edges: set[tuple[int, int]]
    view_angle: str
    root_node_id: int
    feature_manifest_version: int = 1

    def __post_init__(self):
        self.edges = {_canonical_edge(u, v) for (u, v) in self.edges}

    @property
    def n(self) -> int:
        return len(self.nodes)

    def node_ids(self) -> list[int]:
        return [node.id for node in self.nodes]

    def node_by_id(self, node_id: int) -> GraphNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise GraphValidationError(f"no node with id {node_id}")

    def index_of(self, node_id: int) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise GraphValidationError(f"no node with id {node_id}")

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def feature_matrix(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 0))
        return np.vstack([np.asarray(n.features, dtype=np.float64) for n in self.nodes])

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {node.id: set() for node in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def with_features(self, features: np.ndarray) -> "IndividualGraph":
        """Copy of this graph with node features replaced row by row."""
        nodes = [replace(n, features=np.asarray(f, dtype=np.float64)) for n, f in zip(self.nodes, features)]
        return IndividualGraph(nodes, set(self.edges), self.view_angle, self.root_node_id, self.feature_manifest_version)


def _canonical_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u <= v else (v, u)


def validate_graph(g: IndividualGraph) -> list[str]:
    """Return a list of violation messages; empty means the graph is valid."""
    findings: list[str] = []
    ids = g.node_ids()
    if len(set(ids)) != len(ids):
        findings.append("duplicate node ids")
    id_set = set(ids)
    if not g.nodes:
        findings.append("graph has no nodes")
        return findings
    if g.view_angle not in VIEW_ANGLES:
        findings.append(f"unknown view angle {g.view_angle!r}")
    if g.root_node_id not in id_set:
        findings.append(f"missing root: node {g.root_node_id} does not exist")
    dims = {np.asarray(n.features).shape for n in g.nodes}
    if len(dims) > 1:
        findings.append(f"feature dim mismatch across nodes: {sorted(dims)}")
    for n in g.nodes:
        feats = np.asarray(n.features, dtype=np.float64)
        if feats.ndim != 1:
            findings.append(f"node {n.id}: features must be a flat vector")
        elif not np.all(np.isfinite(feats)):
            findings.append(f"node {n.id}: non-finite feature value")
    for u, v in g.edges:
        if u == v:
            findings.append(f"self-loop at node {u}")
        if u not in id_set or v not in id_set:
            findings.append(f"edge ({u},{v}) references a missing node")
    # connectivity over existing nodes
    adj = {i: set() for i in id_set}
    for u, v in g.edges:
        if u in id_set and v in id_set and u != v:
            adj[u].add(v)
            adj[v].add(u)
    start = ids[0]
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nb in adj[node]:
            if nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    if len(seen) != len(id_set):
        findings.append("disconnected: graph has more than one component")
    return findings


def _require_valid(g: IndividualGraph, name: str) -> None:
    findings = validate_graph(g)
    if findings:
        raise GraphValidationError(f"{name} invalid: " + "; ".join(findings))


@dataclass
class AssociationGraph:
    """Product graph of two individual graphs.

    Vertex (i, a) pairs node i of the first graph with node a of the second
    and lives at row ``i * n2 + a``.  For every edge (i, j) of the first graph
    and (a, b) of the second (both in canonical low-high order) there are two
    undirected association edges, {(i,a),(j,b)} and {(i,b),(j,a)}, each stored
    once with its endpoints ordered by vertex index.  The stored edge feature
    is [v_i, v_j, v_a, v_b].
    """

    n1: int
    n2: int
    vertex_features: np.ndarray  # (n1*n2, 2d)
    edges: np.ndarray  # (E, 2) vertex-index pairs, lexicographically sorted
    edge_features: np.ndarray  # (E, 4d)
    feature_dim: int

    @property
    def num_vertices(self) -> int:
        return self.n1 * self.n2

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def vertex_index(self, i: int, a: int) -> int:
        return i * self.n2 + a

    def vertex_pair(self, index: int) -> tuple[int, int]:
        return divmod(index, self.n2)


def build_association_graph(g1: IndividualGraph, g2: IndividualGraph) -> AssociationGraph:
    """Construct the association graph of two same-view individual graphs.

    Requires ``g1.n <= g2.n``; callers swap the pair beforehand when needed.
    """
    _require_valid(g1, "first graph")
    _require_valid(g2, "second graph")
    if g1.view_angle != g2.view_angle:
        raise GraphValidationError(
            f"view angle mismatch: {g1.view_angle} vs {g2.view_angle}"
        )
    if g1.n > g2.n:
        raise GraphValidationError(
            f"first graph must not be larger than second ({g1.n} > {g2.n})"
        )
    f1 = g1.feature_matrix()
    f2 = g2.feature_matrix()
    if f1.shape[1] != f2.shape[1]:
        raise GraphValidationError(
            f"feature dim mismatch between graphs: {f1.shape[1]} vs {f2.shape[1]}"
        )
    d = f1.shape[1]
    n1, n2 = g1.n, g2.n

    left = np.repeat(f1, n2, axis=0)
    right = np.tile(f2, (n1, 1))
    vertex_features = np.concatenate([left, right], axis=1)

    index1 = {node.id: i for i, node in enumerate(g1.nodes)}
    index2 = {node.id: i for i, node in enumerate(g2.nodes)}
    edge_list: list[tuple[int, int]] = []
    feat_list: list[np.ndarray] = []
    for u1, v1 in g1.sorted_edges():
        i, j = index1[u1], index1[v1]
        if i > j:
            i, j = j, i
        for u2, v2 in g2.sorted_edges():
            a, b = index2[u2], index2[v2]
            if a > b:
                a, b = b, a
            feat = np.concatenate([f1[i], f1[j], f2[a], f2[b]])
            for va, vb in ((i * n2 + a, j * n2 + b), (i * n2 + b, j * n2 + a)):
                lo, hi = (va, vb) if va < vb else (vb, va)
                edge_list.append((lo, hi))
                feat_list.append(feat)

    if edge_list:
        order = sorted(range(len(edge_list)), key=lambda k: edge_list[k])
        edges = np.array([edge_list[k] for k in order], dtype=np.intp)
        edge_features = np.vstack([feat_list[k] for k in order])
    else:
        edges = np.zeros((0, 2), dtype=np.intp)
        edge_features = np.zeros((0, 4 * d))

    return AssociationGraph(
        n1=n1,
        n2=n2,
        vertex_features=vertex_features,
        edges=edges,
        edge_features=edge_features,
        feature_dim=d,
    )


def ground_truth_assignment(g1: IndividualGraph, g2: IndividualGraph) -> np.ndarray:
    """Binary n1 x n2 matrix: 1 where split labels match exactly.

    Both graphs must be fully labeled with unique split labels, so every row
    and column contains at most one 1 (one-to-one or one-to-zero).
    """
    for name, g in (("first graph", g1), ("second graph", g2)):
        labels = [node.label for node in g.nodes]
        if any(lab is None for lab in labels):
            raise LabelError(f"{name} has unlabeled nodes")
        texts = [str(lab) for lab in labels]
        dupes = sorted({t for t in texts if texts.count(t) > 1})
        if dupes:
            raise LabelError(f"{name} has duplicate split labels: {dupes}")
    matrix = np.zeros((g1.n, g2.n))
    for i, node1 in enumerate(g1.nodes):
        for a, node2 in enumerate(g2.nodes):
            if node1.label == node2.label:
                matrix[i, a] = 1.0
    return matrix


# ---------------------------------------------------------------------------
# graph JSON format
# ---------------------------------------------------------------------------

_TOP_KEYS = {"format_version", "feature_manifest_version", "view_angle", "root_node_id", "nodes", "edges"}
_NODE_KEYS = {"id", "label", "features", "key_points"}


def graph_to_json(g: IndividualGraph) -> dict:
    nodes = []
    for node in g.nodes:
        entry: dict = {
            "id": int(node.id),
            "features": [float(x) for x in np.asarray(node.features, dtype=np.float64)],
            "key_points": [[float(c) for c in p] for p in node.key_points],
        }
        if node.label is not None:
            entry["label"] = str(node.label)
        nodes.append(entry)
    return {
        "format_version": GRAPH_FORMAT_VERSION,
        "feature_manifest_version": int(g.feature_manifest_version),
        "view_angle": g.view_angle,
        "root_node_id": int(g.root_node_id),
        "nodes": nodes,
        "edges": [[int(u), int(v)] for u, v in g.sorted_edges()],
    }


def graph_from_json(payload: dict, source: str = "<graph>") -> IndividualGraph:
    if not isinstance(payload, dict):
        raise FileFormatError(f"{source}: graph document must be a JSON object")
    unknown = set(payload) - _TOP_KEYS
    if unknown:
        raise FileFormatError(f"{source}: unknown field(s) {sorted(unknown)}")
    for key in ("format_version", "view_angle", "root_node_id", "nodes", "edges"):
        if key not in payload:
            raise FileFormatError(f"{source}: missing field {key!r}")
    if payload["format_version"] != GRAPH_FORMAT_VERSION:
        raise FileFormatError(
            f"{source}: unsupported format_version {payload['format_version']!r}"
        )
    nodes = []
    for k, entry in enumerate(payload["nodes"]):
        if not isinstance(entry, dict):
            raise FileFormatError(f"{source}: nodes[{k}] must be an object")
        bad = set(entry) - _NODE_KEYS
        if bad:
            raise FileFormatError(f"{source}: nodes[{k}] unknown field(s) {sorted(bad)}")
        for key in ("id", "features", "key_points"):
            if key not in entry:
                raise FileFormatError(f"{source}: nodes[{k}] missing field {key!r}")
        kps = entry["key_points"]
        if len(kps) != 2 or any(len(p) != 2 for p in kps):
            raise FileFormatError(f"{source}: nodes[{k}] key_points must be two [x,y] pairs")
        label = None
        if "label" in entry:
            try:
                label = SemanticLabel.parse(entry["label"])
            except LabelError as err:
                raise FileFormatError(f"{source}: nodes[{k}]: {err}") from err
        nodes.append(
            GraphNode(
                id=int(entry["id"]),
                features=np.asarray(entry["features"], dtype=np.float64),
                key_points=((float(kps[0][0]), float(kps[0][1])), (float(kps[1][0]), float(kps[1][1]))),
                label=label,
            )
        )
    edges = set()
    for k, pair in enumerate(payload["edges"]):
        if len(pair) != 2:
            raise FileFormatError(f"{source}: edges[{k}] must be a pair of node ids")
        edges.add((int(pair[0]), int(pair[1])))
    return IndividualGraph(
        nodes=nodes,
        edges=edges,
        view_angle=str(payload["view_angle"]),
        root_node_id=int(payload["root_node_id"]),
        feature_manifest_version=int(payload.get("feature_manifest_version", 1)),
    )


def save_graph(g: IndividualGraph, path) -> None:
    from .fileio import atomic_write_text

    atomic_write_text(path, json.dumps(graph_to_json(g), indent=2) + "\n")


def load_graph(path) -> IndividualGraph:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise FileFormatError(f"{path}: not valid JSON ({err})") from err
    return graph_from_json(payload, source=str(path))
