"""Training, template-voting inference, and label splitting/merging.

Main branches (LAD, LCX) are split into indexed sub-segments (LAD1, LAD2,
...) along the blood flow so that graph matching is one-to-one; side
branches (D, OM) are indexed by how far from the root they attach.  After
matching, labels are reported merged back to their base classes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .assignment import argmax_assignment, decode_assignment
from .errors import GraphValidationError, LabelError, TemplateError
from .features import FeatureScaler, fit_scaler
from .graphs import (
    IndividualGraph,
    SemanticLabel,
    build_association_graph,
    ground_truth_assignment,
)
from .model import MatcherParams, forward, init_params
from .nn import AdamState, adam_step
from .rng import stream

__all__ = [
    "TrainConfig",
    "split_labels",
    "merge_labels",
    "train",
    "matching_loss",
    "infer_labels",
    "InferenceResult",
    "NodeVote",
]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    seed: int = 0
    hidden: int = 64
    attention_iters: int = 3
    conv_iters: int = 2
    loss_every: int = 50

    def __post_init__(self):
        if self.steps < 0:
            raise GraphValidationError("steps must be >= 0")


def merge_labels(label: SemanticLabel) -> str:
    """Drop the split index: LAD2 -> LAD, OM1 -> OM."""
    return label.merged()


def _node_depths(g: IndividualGraph) -> dict[int, int]:
    adj = g.adjacency()
    depth = {g.root_node_id: 0}
    queue = deque([g.root_node_id])
    while queue:
        node = queue.popleft()
        for nb in sorted(adj[node]):
            if nb not in depth:
                depth[nb] = depth[node] + 1
                queue.append(nb)
    if len(depth) != g.n:
        raise GraphValidationError("graph is not connected; cannot order labels")
    return depth


def split_labels(g: IndividualGraph) -> IndividualGraph:
    """Assign flow-ordered indices to main-branch runs and side branches.

    Existing indices are ignored and re-derived.  Raises if a main branch
    forms two disconnected runs or the result is not unique per graph.
    """
    if any(node.label is None for node in g.nodes):
        raise LabelError("split_labels requires a fully labeled graph")
    depth = _node_depths(g)
    root = g.node_by_id(g.root_node_id)
    rx, ry = root.key_points[0]

    def order_key(node):
        px, py = node.key_points[0]
        return (depth[node.id], math.hypot(px - rx, py - ry), node.id)

    new_labels: dict[int, SemanticLabel] = {}
    for base in ("LMA",):
        for node in g.nodes:
            if node.label.base == base:
                new_labels[node.id] = SemanticLabel(base)
    for base in ("LAD", "LCX"):
        run = [node for node in g.nodes if node.label.base == base]
        if not run:
            continue
        ids = {node.id for node in run}
        adj = g.adjacency()
        seen = {run[0].id}
        stack = [run[0].id]
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if nb in ids and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(run):
            raise LabelError(f"{base} nodes form disconnected runs; cannot index them")
        for idx, node in enumerate(sorted(run, key=order_key), start=1):
            new_labels[node.id] = SemanticLabel(base, idx)
    for base in ("D", "OM"):
        branches = [node for node in g.nodes if node.label.base == base]
        for idx, node in enumerate(sorted(branches, key=order_key), start=1):
            new_labels[node.id] = SemanticLabel(base, idx)

    texts = [str(new_labels[node.id]) for node in g.nodes]
    dupes = sorted({t for t in texts if texts.count(t) > 1})
    if dupes:
        raise LabelError(f"split labels are not unique: {dupes}")
    nodes = [replace(node, label=new_labels[node.id]) for node in g.nodes]
    return IndividualGraph(
        nodes, set(g.edges), g.view_angle, g.root_node_id, g.feature_manifest_version
    )


def matching_loss(prediction: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    """Summed squared error between predicted and true assignment matrices."""
    flat = target.reshape(-1, 1).astype(np.float64)
    return ad.sum_squares(ad.sub(prediction, ad.Tensor(flat)))


def _same_view_pairs(graphs: list[IndividualGraph]) -> list[tuple[int, int]]:
    pairs = []
    for i, gi in enumerate(graphs):
        for j, gj in enumerate(graphs):
            if i != j and gi.view_angle == gj.view_angle:
                pairs.append((i, j))
    return pairs


def train(
    graphs: list[IndividualGraph],
    config: TrainConfig,
    pairs: list[tuple[int, int]] | None = None,
    feature_names: list[str] | None = None,
) -> tuple[MatcherParams, list[tuple[int, float]]]:
    """Optimize the matcher on same-view graph pairs; returns (params, loss curve).

    Each step samples one (ordered) pair uniformly, swaps it so n1 <= n2,
    builds the association graph from min-max scaled features, and applies
    one Adam update on the summed squared assignment error.  ``pairs`` may
    pin an explicit pair list (indices into ``graphs``); by default all
    same-view ordered pairs (excluding self-pairs) are eligible.
    """
    if not graphs:
        raise GraphValidationError("training needs at least one graph")
    dims = {g.feature_matrix().shape[1] for g in graphs}
    if len(dims) != 1:
        raise GraphValidationError(f"training graphs disagree on feature dim: {sorted(dims)}")
    d = dims.pop()

    scaler = fit_scaler(graphs)
    scaled = [scaler.apply_graph(g) for g in graphs]

    if pairs is None:
        pairs = _same_view_pairs(graphs)
    if not pairs:
        raise GraphValidationError("no same-view training pair is available")
    targets: dict[tuple[int, int], np.ndarray] = {}
    assoc_cache: dict[tuple[int, int], object] = {}  # bounded; see below

    params = init_params(
        d,
        config.seed,
        hidden=config.hidden,
        attention_iters=config.attention_iters,
        conv_iters=config.conv_iters,
        feature_names=feature_names,
    )
    params.scale_lo = scaler.lo.copy()
    params.scale_hi = scaler.hi.copy()

    opt = AdamState(lr=config.lr)
    tensors = params.parameters()
    rng = stream(config.seed, "train", "pairs")
    curve: list[tuple[int, float]] = []
    for step in range(1, config.steps + 1):
        i, j = pairs[int(rng.integers(0, len(pairs)))]
        if graphs[i].n > graphs[j].n:
            i, j = j, i
        if (i, j) in assoc_cache:
            assoc = assoc_cache[(i, j)]
        else:
            assoc = build_association_graph(scaled[i], scaled[j])
            if len(assoc_cache) < 128:
                assoc_cache[(i, j)] = assoc
        if (i, j) not in targets:
            targets[(i, j)] = ground_truth_assignment(graphs[i], graphs[j])
        _, trace = forward(params, assoc)
        loss = matching_loss(trace.prediction, targets[(i, j)])
        ad.backward(loss)
        grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for name, t in tensors.items()
        }
        adam_step(opt, tensors, grads)
        if step % config.loss_every == 0 or step == config.steps:
            curve.append((step, float(loss.value)))
    return params, curve


# ---------------------------------------------------------------------------
# template-voting inference
# ---------------------------------------------------------------------------


@dataclass
class NodeVote:
    label: str  # split label as voted by templates
    count: int
    mean_prob: float


@dataclass
class PerNodeResult:
    node_id: int
    predicted: str  # merged base class
    predicted_split: str
    true: str | None
    votes: list[NodeVote] = field(default_factory=list)


@dataclass
class InferenceResult:
    per_node: list[PerNodeResult]
    skipped_templates: list[tuple[str, str]]  # (template id, reason)
    n_used_templates: int


def _scaler_of(params: MatcherParams) -> FeatureScaler | None:
    if params.scale_lo is None or params.scale_hi is None:
        return None
    return FeatureScaler(lo=params.scale_lo, hi=params.scale_hi)


def infer_labels(
    params: MatcherParams,
    test_graph: IndividualGraph,
    templates: list[IndividualGraph],
    template_ids: list[str] | None = None,
    decode: str = "hungarian",
) -> InferenceResult:
    """Label every test node by majority vote over template matchings.

    A template is usable when it shares the test graph's view angle and has
    at least as many nodes.  Vote ties break by higher mean matched
    probability, then lexicographically smaller label.
    """
    if template_ids is None:
        template_ids = [f"template_{k}" for k in range(len(templates))]
    scaler = _scaler_of(params)
    scaled_test = scaler.apply_graph(test_graph) if scaler else test_graph

    votes: list[dict[str, list[float]]] = [dict() for _ in test_graph.nodes]
    skipped: list[tuple[str, str]] = []
    used = 0
    for tid, template in zip(template_ids, templates):
        if template.view_angle != test_graph.view_angle:
            skipped.append((tid, f"view angle {template.view_angle} != {test_graph.view_angle}"))
            continue
        if test_graph.n > template.n:
            skipped.append((tid, f"template smaller than test graph ({template.n} < {test_graph.n})"))
            continue
        if any(node.label is None for node in template.nodes):
            skipped.append((tid, "template has unlabeled nodes"))
            continue
        scaled_template = scaler.apply_graph(template) if scaler else template
        assoc = build_association_graph(scaled_test, scaled_template)
        matrix, _ = forward(params, assoc)
        matching = (
            decode_assignment(matrix) if decode == "hungarian" else argmax_assignment(matrix)
        )
        used += 1
        for i, a in matching:
            label = str(template.nodes[a].label)
            votes[i].setdefault(label, []).append(float(matrix[i, a]))

    if used == 0:
        reasons = "; ".join(f"{tid}: {why}" for tid, why in skipped) or "no templates given"
        raise TemplateError(f"no usable template for this graph ({reasons})")

    per_node: list[PerNodeResult] = []
    for i, node in enumerate(test_graph.nodes):
        tallies = [
            NodeVote(label=lab, count=len(ps), mean_prob=float(np.mean(ps)))
            for lab, ps in votes[i].items()
        ]
        tallies.sort(key=lambda v: (-v.count, -v.mean_prob, v.label))
        winner = tallies[0]
        split = SemanticLabel.parse(winner.label)
        per_node.append(
            PerNodeResult(
                node_id=node.id,
                predicted=split.merged(),
                predicted_split=winner.label,
                true=None if node.label is None else node.label.merged(),
                votes=tallies,
            )
        )
    return InferenceResult(per_node=per_node, skipped_templates=skipped, n_used_templates=used)
