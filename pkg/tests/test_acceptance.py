"""Acceptance criteria A1-A10.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them all).
The expensive training fixture is shared between the labeling and robustness
criteria.  Stated runtime budgets are honored by construction (sizes pinned
below); the suite asserts outcomes, not wall-clock.
"""

import filecmp
import itertools
import os
import time

import numpy as np
import pytest

from arterymatch import autodiff as ad
from arterymatch.assignment import assignment_total, decode_assignment
from arterymatch.cli import main as cli_main
from arterymatch.dataset import assign_roles
from arterymatch.explain import explain_features, explain_nodes, fidelity
from arterymatch.extract import extract_graph
from arterymatch.features import FeatureConfig, FeatureScaler
from arterymatch.graphs import build_association_graph, ground_truth_assignment
from arterymatch.metrics import SWEEP_PROBABILITIES, compute_metrics, perturb_graph, robustness_sweep
from arterymatch.model import forward, init_params
from arterymatch.pipeline import TrainConfig, infer_labels, train
from arterymatch.rng import derive_seed, stream
from arterymatch.synthetic import TreeGrammarConfig, generate_case
from conftest import random_tree_graph


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"{criterion}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"{criterion} failed: {detail}"


# ---------------------------------------------------------------------- A1 --


def test_a1_association_graph_laws():
    t0 = time.time()
    rng = np.random.default_rng(11)
    checked = 0
    ok = True
    for _ in range(200):
        n1 = int(rng.integers(2, 9))
        n2 = int(rng.integers(n1, 11))
        g1 = random_tree_graph(n1, seed=int(rng.integers(1 << 30)))
        g2 = random_tree_graph(n2, seed=int(rng.integers(1 << 30)))
        assoc = build_association_graph(g1, g2)
        ok = ok and assoc.num_vertices == n1 * n2
        ok = ok and assoc.num_edges == 2 * len(g1.edges) * len(g2.edges)
        checked += 1
    dt = time.time() - t0
    report("A1 association-graph law", ok and dt < 10.0, f"{checked} pairs in {dt:.1f}s")


# ---------------------------------------------------------------------- A2 --


def test_a2_gradient_integrity():
    # relative error uses a 1e-3 floor in the denominator: for sub-1e-3
    # gradients the check is an absolute 1e-7 bound, which stays above the
    # h^2 truncation noise of central differences through instance norm.
    # An entry whose loss has a ReLU/variance-branch kink within h of the
    # operating point makes the h=1e-5 estimate itself wrong; such entries
    # (a handful per run) are re-estimated at h=1e-7, where a kink artifact
    # vanishes but a genuinely wrong backward gradient would keep failing.
    t0 = time.time()
    h = 1e-5
    worst = 0.0
    refined = 0
    checked = 0
    for trial in range(5):
        params = init_params(6, seed=200 + trial)  # full size: hidden 64, 3+2 iters
        n1 = 3 + (trial % 2)
        n2 = 4 + (trial % 2)
        g1 = random_tree_graph(n1, seed=300 + trial, d=6)
        g2 = random_tree_graph(n2, seed=400 + trial, d=6)
        assoc = build_association_graph(g1, g2)
        target = np.random.default_rng(trial).integers(0, 2, (n1, n2)).astype(float)

        def loss_value():
            _, trace = forward(params, assoc)
            diff = ad.sub(trace.prediction, ad.Tensor(target.reshape(-1, 1)))
            return ad.sum_squares(diff)

        loss = loss_value()
        ad.backward(loss)
        tensors = params.parameters()
        picker = np.random.default_rng(500 + trial)

        def central_difference(flat, ix, step):
            orig = flat[ix]
            flat[ix] = orig + step
            up = float(loss_value().value)
            flat[ix] = orig - step
            down = float(loss_value().value)
            flat[ix] = orig
            return (up - down) / (2 * step)

        for name, tensor in tensors.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.value)
            flat = tensor.value.reshape(-1)
            count = min(4, flat.size)
            for ix in picker.choice(flat.size, size=count, replace=False):
                checked += 1
                an = grad.reshape(-1)[ix]
                fd = central_difference(flat, ix, h)
                err = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
                if err >= 1e-4:
                    refined += 1
                    fd = central_difference(flat, ix, 1e-7)
                    err = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
                worst = max(worst, err)
    dt = time.time() - t0
    report(
        "A2 gradient integrity",
        worst < 1e-4 and refined <= checked * 0.02 and dt < 120.0,
        f"max relative error {worst:.2e} over 5 pairs x all 14 networks "
        f"({checked} entries, {refined} kink refinements) in {dt:.0f}s",
    )


# ---------------------------------------------------------------------- A3 --

A3_GRAMMAR = TreeGrammarConfig(
    lad_segments=(1, 2), lcx_segments=(1, 2), lao_prob=1.0, image_size=(128, 128)
)


def test_a3_overfit_sanity():
    t0 = time.time()
    graphs = [generate_case(A3_GRAMMAR, 1000 + k).graph for k in range(16)]
    pairs = [(2 * k, 2 * k + 1) for k in range(8)]
    params, _ = train(graphs, TrainConfig(steps=5000, lr=1e-4, seed=0), pairs=pairs)
    scaler = FeatureScaler(params.scale_lo, params.scale_hi)
    errors = []
    for i, j in pairs:
        a, b = (i, j) if graphs[i].n <= graphs[j].n else (j, i)
        assoc = build_association_graph(scaler.apply_graph(graphs[a]), scaler.apply_graph(graphs[b]))
        prediction, _ = forward(params, assoc)
        target = ground_truth_assignment(graphs[a], graphs[b])
        errors.append(float(((prediction - target) ** 2).mean()))
    mean_err = float(np.mean(errors))
    dt = time.time() - t0
    report(
        "A3 overfit sanity",
        mean_err < 0.02 and dt < 300.0,
        f"mean per-entry squared error {mean_err:.5f} after 5000 steps in {dt:.0f}s",
    )


# ----------------------------------------------------------------- A4 + A9 --

A4_GRAMMAR = TreeGrammarConfig()


@pytest.fixture(scope="module")
def desk_scale_setup():
    cases = [
        generate_case(A4_GRAMMAR, derive_seed(42, "case", k) & 0x7FFFFFFF)
        for k in range(130)
    ]
    roles = assign_roles(
        [(f"case_{k:04d}", c.graph.view_angle, c.graph.n) for k, c in enumerate(cases)],
        n_templates=10,
        n_test=20,
        seed=42,
    )
    split = {"train": [], "test": [], "template": []}
    for k, case in enumerate(cases):
        split[roles[f"case_{k:04d}"]].append(case.graph)
    t0 = time.time()
    params, _ = train(split["train"], TrainConfig(steps=2000, lr=1e-4, seed=7))
    train_seconds = time.time() - t0
    return params, split, train_seconds


def _weighted_accuracy(params, tests, templates):
    outcomes = []
    for graph in tests:
        result = infer_labels(params, graph, templates)
        outcomes.extend((r.true, r.predicted) for r in result.per_node)
    return compute_metrics(outcomes)


def test_a4_desk_scale_labeling(desk_scale_setup):
    params, split, train_seconds = desk_scale_setup
    t0 = time.time()
    metrics = _weighted_accuracy(params, split["test"], split["template"])
    dt = train_seconds + (time.time() - t0)
    report(
        "A4 desk-scale labeling",
        metrics.accuracy >= 0.85 and dt < 900.0,
        f"weighted ACC {metrics.accuracy:.4f} on {metrics.n} segments "
        f"(100 train / 10 templates / 20 test; {dt:.0f}s)",
    )


def _oracle_perturb_survivors(graph, probability, rng):
    """Independent replay of the documented drop policy (own degree counting)."""
    alive = {n.id for n in graph.nodes}
    nodes = {n.id: n for n in graph.nodes}
    for node_id in sorted(alive):
        if node_id not in alive:
            continue
        node = nodes[node_id]
        if node.label.base == "LMA":
            continue
        kp_count = {}
        for other_id in alive:
            for kp in nodes[other_id].key_points:
                kp_count[kp] = kp_count.get(kp, 0) + 1
        if min(kp_count[node.key_points[0]], kp_count[node.key_points[1]]) != 1:
            continue
        rest = alive - {node_id}
        if not rest:
            continue
        adjacency = {i: set() for i in rest}
        for u, v in graph.edges:
            if u in rest and v in rest:
                adjacency[u].add(v)
                adjacency[v].add(u)
        start = next(iter(sorted(rest)))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(rest):
            continue
        if rng.random() < probability:
            alive = rest
    return alive


def test_a9_robustness_protocol(desk_scale_setup):
    params, split, _ = desk_scale_setup
    tests, templates = split["test"], split["template"]

    # structural rules over 1,000 seeded perturbations, against a replay oracle
    structural_ok = True
    count = 0
    for seed in range(50):
        for g_index, graph in enumerate(tests):
            rng = stream(seed, "accept9", g_index)
            perturbed = perturb_graph(graph, 0.5, rng)
            count += 1
            labels = {str(n.label) for n in perturbed.nodes}
            structural_ok = structural_ok and "LMA" in labels
            oracle_rng = stream(seed, "accept9", g_index)
            survivors = _oracle_perturb_survivors(graph, 0.5, oracle_rng)
            structural_ok = structural_ok and {n.id for n in perturbed.nodes} == survivors
            if count >= 1000:
                break
        if count >= 1000:
            break

    baseline = _weighted_accuracy(params, tests, templates)
    sweep = robustness_sweep(params, tests, templates, SWEEP_PROBABILITIES, seed=5)
    worst_p = SWEEP_PROBABILITIES[-1]
    degradation = baseline.accuracy - sweep[worst_p].accuracy
    report(
        "A9 robustness protocol",
        structural_ok and degradation <= 0.15,
        f"{count} perturbations structurally valid; ACC {baseline.accuracy:.4f} -> "
        f"{sweep[worst_p].accuracy:.4f} at p=0.20 (degradation {degradation:.4f})",
    )


# ---------------------------------------------------------------------- A5 --


def test_a5_assignment_optimality():
    rng = np.random.default_rng(55)
    ok = True
    for _ in range(1000):
        n1 = int(rng.integers(1, 7))
        n2 = int(rng.integers(n1, 7))
        matrix = rng.uniform(size=(n1, n2))
        total = assignment_total(matrix, decode_assignment(matrix))
        best = -1.0
        for cols in itertools.permutations(range(n2), n1):
            candidate = 0.0
            for i in range(n1):
                candidate = candidate + float(matrix[i, cols[i]])
            best = max(best, candidate)
        ok = ok and total == best
    report("A5 assignment optimality", ok, "1000 random matrices up to 6x6, exact equality")


# ---------------------------------------------------------------------- A6 --


def test_a6_metric_correctness():
    pairs = (
        [("LAD", "LAD")] * 5
        + [("LCX", "LCX")] * 2
        + [("LCX", "D")]
        + [("D", "D")] * 2
    )
    got = compute_metrics(pairs)
    expected = {
        "accuracy": 1.0 * 0.5 + 0.9 * 0.3 + 0.9 * 0.2,
        "precision": 1.0 * 0.5 + 1.0 * 0.3 + (2 / 3) * 0.2,
        "recall": 1.0 * 0.5 + (2 / 3) * 0.3 + 1.0 * 0.2,
        "f1": 1.0 * 0.5 + 0.8 * 0.3 + 0.8 * 0.2,
    }
    ok = all(
        abs(getattr(got, key) - value) < 1e-12 for key, value in expected.items()
    )
    printed = compute_metrics(pairs, printed_recall=True)
    expected_printed = 1.0 * 0.5 + (7 / 8) * 0.3 + 1.0 * 0.2
    ok = ok and abs(printed.recall - expected_printed) < 1e-12
    report(
        "A6 metric correctness",
        ok,
        f"weighted ACC {got.accuracy:.4f} PREC {got.precision:.4f} REC {got.recall:.4f} "
        f"F1 {got.f1:.4f}; printed-form REC {printed.recall:.4f}; all within 1e-12",
    )


# ---------------------------------------------------------------------- A7 --


def test_a7_topology_recovery():
    t0 = time.time()
    recovered = 0
    for seed in range(100):
        case = generate_case(A4_GRAMMAR, seed)
        graph = extract_graph(
            case.mask,
            FeatureConfig(),
            root_hint=case.layout.root_point,
            view_angle=case.graph.view_angle,
        )

        def degree_multiset(g):
            adjacency = g.adjacency()
            return sorted(len(adjacency[n.id]) for n in g.nodes)

        recovered += int(
            graph.n == case.graph.n
            and degree_multiset(graph) == degree_multiset(case.graph)
        )
    dt = time.time() - t0
    report(
        "A7 topology recovery",
        recovered >= 95 and dt < 120.0,
        f"{recovered}/100 cases recovered node count and degree multiset in {dt:.0f}s",
    )


# ---------------------------------------------------------------------- A8 --


def test_a8_explanation_contracts():
    params = init_params(5, seed=88, hidden=16)
    g1 = random_tree_graph(3, seed=89, d=5)
    g2 = random_tree_graph(4, seed=90, d=5)
    full = fidelity(params, g1, g2, np.ones(4, bool), np.ones(5, bool))
    ok = full == 1.0

    tau = 0.8
    features = explain_features(params, [(g1, g2)], tau=tau)
    trace = features.traces[0]
    d = 5
    terminated = (trace and trace[-1].fidelity >= tau) or len(trace) == d
    if not trace:
        terminated = features.initial_fidelities[0] >= tau
    ok = ok and terminated

    nodes = explain_nodes(params, g1, g2, tau=tau)
    node_terminated = nodes.final_fidelity >= tau or len(nodes.order) == g2.n
    ok = ok and node_terminated

    exhaustive = explain_nodes(params, g1, g2, tau=1.0)
    gains = sum(entry["marginal_gain"] for entry in exhaustive.order)
    telescoped = abs(gains - (exhaustive.final_fidelity - exhaustive.initial_fidelity)) < 1e-12
    ok = ok and telescoped and exhaustive.final_fidelity == 1.0
    report(
        "A8 explanation contracts",
        ok,
        f"F(full,full)={full}; greedy stops at tau={tau} or exhaustion; "
        f"gains telescope to {gains:.6f} within 1e-12",
    )


# --------------------------------------------------------------------- A10 --


def _compare_trees(a, b):
    result = filecmp.dircmp(a, b)
    if result.left_only or result.right_only or result.diff_files:
        return False
    return all(
        _compare_trees(os.path.join(a, sub), os.path.join(b, sub))
        for sub in result.common_dirs
    )


def test_a10_determinism(tmp_path):
    synth_args = [
        "--count", "8", "--seed", "21", "--n-templates", "2", "--n-test", "2",
        "--lad-segments", "1", "2", "--lcx-segments", "1", "2",
        "--lao-prob", "1.0", "--image-size", "128", "128",
    ]
    ok = True
    runs = {}
    for tag in ("x", "y"):
        data = tmp_path / f"data_{tag}"
        assert cli_main(["synth", "--out", str(data)] + synth_args) == 0
        model = tmp_path / f"model_{tag}.bin"
        loss = tmp_path / f"loss_{tag}.csv"
        assert cli_main([
            "train", "--manifest", str(data / "manifest.json"), "--out", str(model),
            "--steps", "40", "--seed", "2", "--loss-csv", str(loss),
        ]) == 0
        preds = tmp_path / f"preds_{tag}"
        assert cli_main([
            "infer", "--model", str(model), "--manifest", str(data / "manifest.json"),
            "--out", str(preds),
        ]) == 0
        runs[tag] = (data, model, loss, preds)
    ok = ok and _compare_trees(str(runs["x"][0]), str(runs["y"][0]))
    ok = ok and runs["x"][1].read_bytes() == runs["y"][1].read_bytes()
    ok = ok and runs["x"][2].read_bytes() == runs["y"][2].read_bytes()
    ok = ok and _compare_trees(str(runs["x"][3]), str(runs["y"][3]))
    report(
        "A10 determinism",
        ok,
        "synth/train/infer reruns with identical seed and config are byte-identical",
    )
