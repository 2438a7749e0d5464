import numpy as np
import pytest

from arterymatch.graphs import GraphNode, IndividualGraph, SemanticLabel
from arterymatch.synthetic import TreeGrammarConfig, generate_case

SMALL_GRAMMAR = TreeGrammarConfig(
    lad_segments=(1, 2), lcx_segments=(1, 2), lao_prob=1.0, image_size=(128, 128)
)


def make_graph(n, edges, seed=0, d=6, view="LAO", labels=None, root=0):
    """Random-feature graph with fixed topology; labels as label strings."""
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n):
        label = SemanticLabel.parse(labels[i]) if labels else None
        nodes.append(
            GraphNode(
                id=i,
                features=rng.uniform(0.0, 1.0, d),
                key_points=((float(i), 0.0), (float(i), 1.0)),
                label=label,
            )
        )
    return IndividualGraph(nodes, set(edges), view, root)


def random_tree_graph(n, seed, d=6, view="LAO"):
    rng = np.random.default_rng(seed)
    edges = [(i, int(rng.integers(0, i))) for i in range(1, n)]
    return make_graph(n, edges, seed=seed + 1, d=d, view=view)


@pytest.fixture(scope="session")
def small_cases():
    """Ten small labeled synthetic cases sharing the LAO view."""
    return [generate_case(SMALL_GRAMMAR, 1000 + k) for k in range(10)]
