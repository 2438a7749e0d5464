"""Weighted classification metrics and the segment-drop robustness sweep.

Metrics are computed one-vs-rest per base artery class and aggregated with
support weights (n_c / n):

* accuracy per class includes true negatives, (TP+TN)/n, so the weighted
  accuracy differs from the plain fraction-correct; both are reported.
* recall defaults to TP/(TP+FN).  ``printed_recall=True`` switches to the
  TN/(TN+FN) variant for fidelity experiments.
* F1 is TP / (TP + (FP+FN)/2).

Undefined ratios (0/0) are reported as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphValidationError, LabelError
from .graphs import BASE_CLASSES, IndividualGraph
from .model import MatcherParams
from .pipeline import infer_labels
from .rng import stream

__all__ = [
    "ClassMetrics",
    "MetricsReport",
    "compute_metrics",
    "perturb_graph",
    "robustness_sweep",
    "SWEEP_PROBABILITIES",
]

SWEEP_PROBABILITIES = (0.05, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20)


@dataclass
class ClassMetrics:
    support: int
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    accuracy: float  # support-weighted one-vs-rest accuracy
    precision: float
    recall: float
    f1: float
    micro_accuracy: float  # plain fraction of correctly labeled segments
    n: int
    printed_recall: bool = False

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "printed_recall": self.printed_recall,
            "weighted": {
                "accuracy": self.accuracy,
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
            },
            "micro_accuracy": self.micro_accuracy,
            "per_class": {
                name: {
                    "support": m.support,
                    "tp": m.tp,
                    "tn": m.tn,
                    "fp": m.fp,
                    "fn": m.fn,
                    "accuracy": m.accuracy,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                }
                for name, m in self.per_class.items()
            },
        }

    def csv_rows(self) -> list[list[str]]:
        rows = [["class", "support", "accuracy", "precision", "recall", "f1"]]
        for name in BASE_CLASSES:
            m = self.per_class[name]
            rows.append(
                [name, str(m.support)]
                + [f"{x:.4f}" for x in (m.accuracy, m.precision, m.recall, m.f1)]
            )
        rows.append(
            ["weighted", str(self.n)]
            + [f"{x:.4f}" for x in (self.accuracy, self.precision, self.recall, self.f1)]
        )
        return rows


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(
    pairs: list[tuple[str, str]], printed_recall: bool = False
) -> MetricsReport:
    """Per-class and support-weighted metrics over (true, predicted) base labels."""
    if not pairs:
        raise LabelError("cannot compute metrics over zero labeled segments")
    for true, pred in pairs:
        for value in (true, pred):
            if value not in BASE_CLASSES:
                raise LabelError(f"unknown base class {value!r}; merge labels first")
    n = len(pairs)
    per_class: dict[str, ClassMetrics] = {}
    weighted = {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    for cls in BASE_CLASSES:
        tp = sum(1 for t, p in pairs if t == cls and p == cls)
        fp = sum(1 for t, p in pairs if t != cls and p == cls)
        fn = sum(1 for t, p in pairs if t == cls and p != cls)
        tn = n - tp - fp - fn
        support = tp + fn
        accuracy = _ratio(tp + tn, n)
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tn, tn + fn) if printed_recall else _ratio(tp, tp + fn)
        f1 = tp / (tp + 0.5 * (fp + fn)) if (tp + 0.5 * (fp + fn)) else 0.0
        per_class[cls] = ClassMetrics(support, tp, tn, fp, fn, accuracy, precision, recall, f1)
        weight = support / n
        weighted["accuracy"] += accuracy * weight
        weighted["precision"] += precision * weight
        weighted["recall"] += recall * weight
        weighted["f1"] += f1 * weight
    micro = sum(1 for t, p in pairs if t == p) / n
    return MetricsReport(
        per_class=per_class,
        accuracy=weighted["accuracy"],
        precision=weighted["precision"],
        recall=weighted["recall"],
        f1=weighted["f1"],
        micro_accuracy=micro,
        n=n,
        printed_recall=printed_recall,
    )


# ---------------------------------------------------------------------------
# robustness sweep
# ---------------------------------------------------------------------------


def _key_point_degrees(g: IndividualGraph) -> dict[tuple[float, float], int]:
    degree: dict[tuple[float, float], int] = {}
    for node in g.nodes:
        for kp in node.key_points:
            degree[kp] = degree.get(kp, 0) + 1
    return degree


def _is_connected_without(g: IndividualGraph, drop_id: int) -> bool:
    keep = [node.id for node in g.nodes if node.id != drop_id]
    if not keep:
        return False
    adj = g.adjacency()
    seen = {keep[0]}
    stack = [keep[0]]
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if nb != drop_id and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(keep)


def _without_node(g: IndividualGraph, drop_id: int) -> IndividualGraph:
    nodes = [node for node in g.nodes if node.id != drop_id]
    edges = {(u, v) for (u, v) in g.edges if u != drop_id and v != drop_id}
    return IndividualGraph(nodes, edges, g.view_angle, g.root_node_id, g.feature_manifest_version)


def perturb_graph(
    g: IndividualGraph, probability: float, rng: np.random.Generator
) -> IndividualGraph:
    """Independently drop droppable segments with the given probability.

    Droppable means: labeled anything but LMA, currently a terminal segment
    (one of its key points is on no other remaining segment), and its removal
    keeps the remaining graph connected.  The droppable test is re-evaluated
    after every drop, scanning nodes in ascending id order.
    """
    if any(node.label is None for node in g.nodes):
        raise LabelError("robustness perturbation requires labeled graphs")
    current = g
    for node_id in sorted(node.id for node in g.nodes):
        if not any(node.id == node_id for node in current.nodes):
            continue
        node = current.node_by_id(node_id)
        if node.label.base == "LMA":
            continue
        degrees = _key_point_degrees(current)
        if min(degrees[node.key_points[0]], degrees[node.key_points[1]]) != 1:
            continue
        if current.n <= 1 or not _is_connected_without(current, node_id):
            continue
        if rng.random() < probability:
            current = _without_node(current, node_id)
    return current


def robustness_sweep(
    params: MatcherParams,
    test_graphs: list[IndividualGraph],
    templates: list[IndividualGraph],
    probabilities: tuple[float, ...] = SWEEP_PROBABILITIES,
    seed: int = 0,
    decode: str = "hungarian",
    printed_recall: bool = False,
) -> dict[float, MetricsReport]:
    """Metrics after random segment dropping, one report per drop probability."""
    if not test_graphs:
        raise GraphValidationError("robustness sweep needs a nonempty test set")
    reports: dict[float, MetricsReport] = {}
    for p in probabilities:
        outcomes: list[tuple[str, str]] = []
        for case_index, graph in enumerate(test_graphs):
            rng = stream(seed, "robustness", f"{p:.6f}", case_index)
            perturbed = perturb_graph(graph, p, rng)
            result = infer_labels(params, perturbed, templates, decode=decode)
            for entry in result.per_node:
                outcomes.append((entry.true, entry.predicted))
        reports[p] = compute_metrics(outcomes, printed_recall=printed_recall)
    return reports
