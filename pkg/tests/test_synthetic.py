import numpy as np
import pytest

from arterymatch.errors import MaskError
from arterymatch.graphs import IndividualGraph, validate_graph
from arterymatch.synthetic import (
    TreeGrammarConfig,
    generate_case,
    generate_tree,
    pixelize_polyline,
    rasterize_mask,
)


def grammar_violations(g: IndividualGraph) -> list[str]:
    """Independent validator walking the labeled tree."""
    problems = list(validate_graph(g))
    labels = [n.label for n in g.nodes]
    if any(lab is None for lab in labels):
        return problems + ["unlabeled node"]
    texts = [str(lab) for lab in labels]
    if texts.count("LMA") != 1:
        problems.append("not exactly one LMA")
    if len(set(texts)) != len(texts):
        problems.append("duplicate split labels")
    by_id = {n.id: n for n in g.nodes}
    adj = g.adjacency()

    def neighbors_base(node_id, base):
        return [by_id[v].label for v in adj[node_id] if by_id[v].label.base == base]

    for node in g.nodes:
        base, idx = node.label.base, node.label.index
        if base in ("LAD", "LCX"):
            if idx < 1:
                problems.append(f"{node.label}: main-branch nodes must be indexed")
            # chain continuity: LADk neighbors LAD(k-1) unless k == 1
            if idx > 1 and not any(l.index == idx - 1 for l in neighbors_base(node.id, base)):
                problems.append(f"{node.label}: missing predecessor {base}{idx - 1}")
        if base == "D":
            if not neighbors_base(node.id, "LAD"):
                problems.append(f"{node.label} not attached to the LAD chain")
        if base == "OM":
            if not neighbors_base(node.id, "LCX"):
                problems.append(f"{node.label} not attached to the LCX chain")
    # index monotonicity along the blood flow (hop depth from root)
    depth = {g.root_node_id: 0}
    frontier = [g.root_node_id]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in depth:
                    depth[v] = depth[u] + 1
                    nxt.append(v)
        frontier = nxt
    for base in ("LAD", "LCX", "D", "OM"):
        chain = sorted(
            (n for n in g.nodes if n.label.base == base), key=lambda n: n.label.index
        )
        depths = [depth[n.id] for n in chain]
        if depths != sorted(depths):
            problems.append(f"{base} indices not increasing along the flow")
    return problems


def test_no_side_branches_gives_three_labels():
    cfg = TreeGrammarConfig(d_branch_prob=0.0, om_branch_prob=0.0)
    case = generate_case(cfg, 5)
    assert sorted(str(n.label) for n in case.graph.nodes) == ["LAD1", "LCX1", "LMA"]


def test_same_seed_identical_case():
    cfg = TreeGrammarConfig()
    a = generate_case(cfg, 7)
    b = generate_case(cfg, 7)
    assert np.array_equal(a.mask.bits, b.mask.bits)
    assert np.array_equal(a.mask.intensity, b.mask.intensity)
    assert np.array_equal(a.graph.feature_matrix(), b.graph.feature_matrix())
    assert [str(n.label) for n in a.graph.nodes] == [str(n.label) for n in b.graph.nodes]


@pytest.mark.parametrize("block", range(5))
def test_grammar_validator_over_many_seeds(block):
    cfg = TreeGrammarConfig()
    for seed in range(block * 40, block * 40 + 40):
        layout = generate_tree(cfg, seed)
        labels = [str(p.label) for p in layout.polylines]
        assert labels[0] == "LMA"
        case = generate_case(cfg, seed)
        assert grammar_violations(case.graph) == [], f"seed {seed}"


def test_view_angles_both_occur_and_mirror():
    cfg = TreeGrammarConfig()
    views = {generate_tree(cfg, seed).view_angle for seed in range(30)}
    assert views == {"LAO", "RAO"}


def test_config_validation():
    with pytest.raises(MaskError):
        TreeGrammarConfig(d_branch_prob=1.5)
    with pytest.raises(MaskError):
        TreeGrammarConfig(lad_segments=(4, 2))


def test_rasterize_width_one_exact_polyline_pixels():
    cfg = TreeGrammarConfig(
        vessel_width=(1.0, 1.0), noise_std=0.0, jitter=0.0, d_branch_prob=0.0, om_branch_prob=0.0
    )
    layout = generate_tree(cfg, 3)
    mask = rasterize_mask(layout, cfg)
    expected = set()
    for poly in layout.polylines:
        expected.update(pixelize_polyline(poly.points))
    got = {(int(x), int(y)) for y, x in zip(*np.nonzero(mask.bits))}
    assert got == expected


def test_rasterize_stroke_width_containment():
    cfg = TreeGrammarConfig(vessel_width=(3.0, 3.0), noise_std=0.0)
    layout = generate_tree(cfg, 4)
    mask = rasterize_mask(layout, cfg)
    samples = []
    for poly in layout.polylines:
        for (x0, y0), (x1, y1) in zip(poly.points, poly.points[1:]):
            n = max(int(np.hypot(x1 - x0, y1 - y0) / 0.25), 1)
            for t in np.linspace(0, 1, n):
                samples.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
    samples = np.asarray(samples)
    ys, xs = np.nonzero(mask.bits)
    for x, y in zip(xs, ys):
        d = np.min(np.hypot(samples[:, 0] - x, samples[:, 1] - y))
        assert d <= 1.6  # radius 1.5 plus pixel rounding


def test_rasterize_rejects_out_of_bounds():
    cfg = TreeGrammarConfig()
    layout = generate_tree(cfg, 6)
    layout.polylines[0].points[0] = (-4.0, 10.0)
    with pytest.raises(MaskError, match="outside"):
        rasterize_mask(layout, cfg)


def test_intensity_decays_along_tree():
    cfg = TreeGrammarConfig(noise_std=0.0)
    case = generate_case(cfg, 8)
    root_poly = case.layout.polylines[0]
    tip_poly = case.layout.polylines[-1]
    rx, ry = root_poly.points[0]
    tx, ty = tip_poly.points[-1]
    root_val = case.mask.intensity[int(round(ry)), int(round(rx))]
    tip_val = case.mask.intensity[int(round(ty)), int(round(tx))]
    assert root_val > tip_val > 0


def test_small_cases_fixture_valid(small_cases):
    for case in small_cases:
        assert case.graph.view_angle == "LAO"
        assert grammar_violations(case.graph) == []
