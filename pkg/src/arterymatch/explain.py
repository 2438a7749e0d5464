"""Perturbation-based explanation of the matcher.

The fidelity score of a (node mask, feature mask) pair is the fraction of
association-graph vertices whose 0.5-binarized prediction is unchanged when
masked-out raw features are replaced by zero (before the normalization
record is applied).  Node masking zeroes whole rows of the second graph but
keeps the structure, so the association graph and the score's denominator
stay fixed.

Greedy selection adds one item at a time, always the candidate with the
highest fidelity (ties: lowest index), until fidelity reaches the threshold
or the candidates are exhausted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArteryMatchError, GraphValidationError
from .features import FeatureScaler
from .graphs import IndividualGraph, build_association_graph
from .model import MatcherParams, forward

__all__ = [
    "fidelity",
    "masked_prediction",
    "explain_features",
    "explain_nodes",
    "FeatureImportance",
    "NodeImportance",
]


def _scaler_of(params: MatcherParams) -> FeatureScaler | None:
    if params.scale_lo is None or params.scale_hi is None:
        return None
    return FeatureScaler(lo=params.scale_lo, hi=params.scale_hi)


def _masked_graphs(
    g1: IndividualGraph,
    g2: IndividualGraph,
    node_mask: np.ndarray,
    feature_mask: np.ndarray,
) -> tuple[IndividualGraph, IndividualGraph]:
    f1 = g1.feature_matrix() * feature_mask
    f2 = g2.feature_matrix() * feature_mask
    f2[~node_mask] = 0.0
    return g1.with_features(f1), g2.with_features(f2)


def _binary_prediction(
    params: MatcherParams, g1: IndividualGraph, g2: IndividualGraph
) -> np.ndarray:
    scaler = _scaler_of(params)
    if scaler is not None:
        g1 = scaler.apply_graph(g1)
        g2 = scaler.apply_graph(g2)
    assoc = build_association_graph(g1, g2)
    matrix, _ = forward(params, assoc)
    return matrix > 0.5


def _check_masks(g1, g2, node_mask, feature_mask):
    node_mask = np.asarray(node_mask, dtype=bool)
    feature_mask = np.asarray(feature_mask, dtype=bool)
    d = g1.feature_matrix().shape[1]
    if node_mask.shape != (g2.n,):
        raise GraphValidationError(
            f"node mask length {node_mask.shape} does not match second graph size {g2.n}"
        )
    if feature_mask.shape != (d,):
        raise GraphValidationError(
            f"feature mask length {feature_mask.shape} does not match feature dim {d}"
        )
    return node_mask, feature_mask


def masked_prediction(
    params: MatcherParams,
    g1: IndividualGraph,
    g2: IndividualGraph,
    node_mask: np.ndarray,
    feature_mask: np.ndarray,
) -> np.ndarray:
    """0.5-binarized prediction under the masks."""
    node_mask, feature_mask = _check_masks(g1, g2, node_mask, feature_mask)
    m1, m2 = _masked_graphs(g1, g2, node_mask, feature_mask)
    return _binary_prediction(params, m1, m2)


def fidelity(
    params: MatcherParams,
    g1: IndividualGraph,
    g2: IndividualGraph,
    node_mask: np.ndarray,
    feature_mask: np.ndarray,
    base: np.ndarray | None = None,
) -> float:
    """Fraction of vertex predictions unchanged under masking.

    ``base`` may carry the precomputed binarized unmasked prediction to avoid
    recomputing it inside greedy loops.
    """
    if base is None:
        base = _binary_prediction(params, g1, g2)
    masked = masked_prediction(params, g1, g2, node_mask, feature_mask)
    return float(np.mean(masked == base))


@dataclass
class GreedyStep:
    item: int
    fidelity: float


@dataclass
class FeatureImportance:
    ranking: list[tuple[str, int, float]]  # (feature name, selection count, fraction)
    traces: list[list[GreedyStep]] = field(default_factory=list)
    initial_fidelities: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "ranking": [
                {"feature_name": name, "selection_count": count, "fraction_of_pairs": frac}
                for name, count, frac in self.ranking
            ],
            "pairs": [
                {
                    "initial_fidelity": init,
                    "selections": [
                        {"feature_index": s.item, "fidelity": s.fidelity} for s in trace
                    ],
                }
                for init, trace in zip(self.initial_fidelities, self.traces)
            ],
        }


def _check_tau(tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ArteryMatchError(f"fidelity threshold must be in (0, 1], got {tau}")


def explain_features(
    params: MatcherParams,
    pairs: list[tuple[IndividualGraph, IndividualGraph]],
    tau: float = 0.8,
    feature_names: list[str] | None = None,
) -> FeatureImportance:
    """Greedy unified-feature-mask selection, aggregated over pairs.

    Per pair all nodes stay retained and the feature mask starts empty; the
    single raw feature (applied to every node of both graphs) with the
    highest fidelity is added until fidelity reaches ``tau``.  The ranking
    counts how often each feature was selected across pairs.
    """
    _check_tau(tau)
    if not pairs:
        raise ArteryMatchError("explain_features needs at least one graph pair")
    d = pairs[0][0].feature_matrix().shape[1]
    names = feature_names or params.feature_names or [f"feature_{k}" for k in range(d)]
    if len(names) != d:
        raise ArteryMatchError(f"{len(names)} feature names for {d} features")

    counts = np.zeros(d, dtype=int)
    traces: list[list[GreedyStep]] = []
    initials: list[float] = []
    for g1, g2 in pairs:
        base = _binary_prediction(params, g1, g2)
        node_mask = np.ones(g2.n, dtype=bool)
        feature_mask = np.zeros(d, dtype=bool)
        current = fidelity(params, g1, g2, node_mask, feature_mask, base=base)
        initials.append(current)
        trace: list[GreedyStep] = []
        while current < tau and not feature_mask.all():
            best_gain, best_idx, best_fid = -np.inf, -1, current
            for k in range(d):
                if feature_mask[k]:
                    continue
                feature_mask[k] = True
                f = fidelity(params, g1, g2, node_mask, feature_mask, base=base)
                feature_mask[k] = False
                if f > best_gain:
                    best_gain, best_idx, best_fid = f, k, f
            feature_mask[best_idx] = True
            counts[best_idx] += 1
            current = best_fid
            trace.append(GreedyStep(item=best_idx, fidelity=current))
        traces.append(trace)

    order = sorted(range(d), key=lambda k: (-counts[k], k))
    ranking = [
        (names[k], int(counts[k]), counts[k] / len(pairs)) for k in order if counts[k] > 0
    ]
    return FeatureImportance(ranking=ranking, traces=traces, initial_fidelities=initials)


@dataclass
class NodeImportance:
    order: list[dict]  # {node_id, label, marginal_gain, order, fidelity}
    initial_fidelity: float
    final_fidelity: float

    def to_json(self) -> dict:
        return {
            "initial_fidelity": self.initial_fidelity,
            "final_fidelity": self.final_fidelity,
            "nodes": self.order,
        }


def explain_nodes(
    params: MatcherParams,
    g1: IndividualGraph,
    g2: IndividualGraph,
    tau: float = 0.8,
) -> NodeImportance:
    """Greedy node unmasking on the second (template) graph.

    All second-graph nodes start masked (features zeroed, structure kept) and
    all features unmasked; nodes are added by highest fidelity improvement.
    Each added node's marginal gain is its importance.
    """
    _check_tau(tau)
    d = g1.feature_matrix().shape[1]
    base = _binary_prediction(params, g1, g2)
    feature_mask = np.ones(d, dtype=bool)
    node_mask = np.zeros(g2.n, dtype=bool)
    current = fidelity(params, g1, g2, node_mask, feature_mask, base=base)
    initial = current
    order: list[dict] = []
    rank = 0
    while current < tau and not node_mask.all():
        best_fid, best_idx = -np.inf, -1
        for a in range(g2.n):
            if node_mask[a]:
                continue
            node_mask[a] = True
            f = fidelity(params, g1, g2, node_mask, feature_mask, base=base)
            node_mask[a] = False
            if f > best_fid:
                best_fid, best_idx = f, a
        node_mask[best_idx] = True
        rank += 1
        node = g2.nodes[best_idx]
        order.append(
            {
                "node_id": int(node.id),
                "label": None if node.label is None else str(node.label),
                "marginal_gain": float(best_fid - current),
                "order": rank,
                "fidelity": float(best_fid),
            }
        )
        current = best_fid
    return NodeImportance(order=order, initial_fidelity=initial, final_fidelity=current)
