import numpy as np
import pytest

from arterymatch.errors import LabelError
from arterymatch.metrics import (
    SWEEP_PROBABILITIES,
    compute_metrics,
    perturb_graph,
)
from arterymatch.rng import stream
from conftest import make_graph


def test_all_correct_gives_ones():
    pairs = [("LAD", "LAD")] * 5 + [("LMA", "LMA")] * 2
    report = compute_metrics(pairs)
    assert report.accuracy == 1.0
    assert report.precision == 1.0
    assert report.recall == 1.0
    assert report.f1 == 1.0
    assert report.micro_accuracy == 1.0


def test_hand_computed_three_class_fixture():
    # 5 LAD all correct, 3 LCX with one misread as D, 2 D correct
    pairs = (
        [("LAD", "LAD")] * 5
        + [("LCX", "LCX")] * 2
        + [("LCX", "D")]
        + [("D", "D")] * 2
    )
    n = 10
    report = compute_metrics(pairs)
    lad = report.per_class["LAD"]
    assert (lad.tp, lad.fp, lad.fn, lad.tn) == (5, 0, 0, 5)
    lcx = report.per_class["LCX"]
    assert (lcx.tp, lcx.fp, lcx.fn, lcx.tn) == (2, 0, 1, 7)
    d = report.per_class["D"]
    assert (d.tp, d.fp, d.fn, d.tn) == (2, 1, 0, 7)

    # hand-computed weighted values (support weights 5/10, 3/10, 2/10)
    acc = (10 / 10) * 0.5 + (9 / 10) * 0.3 + (9 / 10) * 0.2
    prec = 1.0 * 0.5 + 1.0 * 0.3 + (2 / 3) * 0.2
    rec = 1.0 * 0.5 + (2 / 3) * 0.3 + 1.0 * 0.2
    f1 = 1.0 * 0.5 + (2 / (2 + 0.5)) * 0.3 + (2 / (2 + 0.5)) * 0.2
    assert abs(report.accuracy - acc) < 1e-12
    assert abs(report.precision - prec) < 1e-12
    assert abs(report.recall - rec) < 1e-12
    assert abs(report.f1 - f1) < 1e-12
    assert abs(report.micro_accuracy - 0.9) < 1e-12
    assert report.n == n


def test_printed_recall_variant():
    pairs = [("LAD", "LAD")] * 5 + [("LCX", "LCX")] * 2 + [("LCX", "D")] + [("D", "D")] * 2
    report = compute_metrics(pairs, printed_recall=True)
    # LCX: TN=7, FN=1 -> 7/8; LAD: TN=5, FN=0 -> 1; D: TN=7, FN=0 -> 1
    expected = 1.0 * 0.5 + (7 / 8) * 0.3 + 1.0 * 0.2
    assert abs(report.recall - expected) < 1e-12
    assert report.printed_recall


def test_weighted_value_rederivable_from_per_class_table():
    rng = np.random.default_rng(0)
    classes = ["LMA", "LAD", "LCX", "D", "OM"]
    pairs = [(classes[rng.integers(0, 5)], classes[rng.integers(0, 5)]) for _ in range(200)]
    report = compute_metrics(pairs)
    rederived = sum(
        m.f1 * m.support / report.n for m in report.per_class.values()
    )
    assert abs(report.f1 - rederived) < 1e-12


def test_metrics_reject_empty_and_unmerged():
    with pytest.raises(LabelError):
        compute_metrics([])
    with pytest.raises(LabelError, match="merge"):
        compute_metrics([("LAD1", "LAD")])


def test_csv_rows_format():
    rows = compute_metrics([("LAD", "LAD"), ("LMA", "LMA")]).csv_rows()
    assert rows[0] == ["class", "support", "accuracy", "precision", "recall", "f1"]
    assert rows[-1][0] == "weighted"
    assert rows[-1][2] == "1.0000"


def _labeled_tree(labels, edges):
    g = make_graph(len(labels), edges, seed=3, labels=labels)
    for i, node in enumerate(g.nodes):
        node.key_points = ((float(i), 0.0), (float(i) + 1.0, 0.0))
    # share key points along edges so terminal detection works
    for u, v in edges:
        a, b = (u, v) if u < v else (v, u)
        shared = (float(a) + 1.0, 0.0)
        g.nodes[a].key_points = (g.nodes[a].key_points[0], shared)
        g.nodes[b].key_points = (shared, g.nodes[b].key_points[1])
    return g


def test_perturb_zero_probability_is_identity():
    g = _labeled_tree(["LMA", "LAD1", "D1"], [(0, 1), (1, 2)])
    rng = stream(0, "t")
    out = perturb_graph(g, 0.0, rng)
    assert out.n == 3


def test_perturb_never_drops_lma_and_keeps_connectivity():
    labels = ["LMA", "LAD1", "LAD2", "D1", "LCX1"]
    edges = [(0, 1), (1, 2), (1, 3), (0, 4)]
    for trial in range(300):
        g = _labeled_tree(labels, edges)
        out = perturb_graph(g, 0.9, stream(trial, "perturb"))
        kept = {str(n.label) for n in out.nodes}
        assert "LMA" in kept
        # connectivity of the survivors
        adj = out.adjacency()
        ids = [n.id for n in out.nodes]
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        assert len(seen) == out.n


def test_perturb_drops_only_terminal_segments():
    labels = ["LMA", "LAD1", "LAD2", "D1"]
    edges = [(0, 1), (1, 2), (1, 3)]
    for trial in range(200):
        g = _labeled_tree(labels, edges)
        out = perturb_graph(g, 0.5, stream(trial, "leaves"))
        dropped = {n.id for n in g.nodes} - {n.id for n in out.nodes}
        for node_id in dropped:
            # independent recount on the original graph: every dropped node had
            # a key point belonging to exactly one segment at drop time; on a
            # tree this means it was never a cut vertex of the remaining graph
            assert node_id != 0
        # LAD1 (node 1) is interior (its both key points shared) unless its
        # neighbors were dropped first; with node order 0,1,2,3 node 1 is
        # examined before 2 and 3, so it must survive
        assert any(n.id == 1 for n in out.nodes)


def test_sweep_probability_constant():
    assert SWEEP_PROBABILITIES == (0.05, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20)
