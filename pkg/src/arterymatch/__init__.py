"""Semantic labeling of coronary artery trees by edge-attention graph matching.

The package covers the full pipeline: binary mask -> centerline -> segment
graph -> trainable graph matching against labeled templates -> per-segment
artery labels, plus evaluation, robustness sweeps, and perturbation-based
explanation.  The scikit-learn style entry points are
:class:`~arterymatch.estimators.GraphMatchingLabeler` and
:class:`~arterymatch.estimators.SkeletonGraphExtractor`; the ``arterymatch``
command line exposes the same steps on files.
"""

__version__ = "0.1.0"

from .graphs import (  # noqa: F401
    AssociationGraph,
    IndividualGraph,
    GraphNode,
    SemanticLabel,
    build_association_graph,
    ground_truth_assignment,
    load_graph,
    save_graph,
    validate_graph,
)
from .model import (  # noqa: F401
    MatcherParams,
    attention_scores,
    forward,
    init_params,
    load_params,
    save_params,
)
from .estimators import GraphMatchingLabeler, SkeletonGraphExtractor  # noqa: F401
