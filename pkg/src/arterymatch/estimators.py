"""scikit-learn style estimators wrapping the matching pipeline.

``SkeletonGraphExtractor`` is a stateless transformer turning binary masks
into attributed segment graphs.  ``GraphMatchingLabeler`` is the trainable
estimator: ``fit`` on labeled graphs, ``predict`` base-class labels for new
graphs by template voting.  Both expose ``get_params``/``set_params`` and
clone cleanly.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import GraphValidationError, LabelError
from .extract import extract_graph
from .features import FeatureConfig
from .graphs import IndividualGraph
from .metrics import MetricsReport, compute_metrics
from .pipeline import InferenceResult, TrainConfig, infer_labels, train
from .skeleton import BinaryMask

__all__ = ["SkeletonGraphExtractor", "GraphMatchingLabeler"]


class SkeletonGraphExtractor(BaseEstimator, TransformerMixin):
    """Binary mask -> attributed segment graph, one graph per input mask.

    Inputs to ``transform`` are :class:`BinaryMask` instances (or
    (mask, view_angle) tuples when views differ per case).
    """

    def __init__(self, topology=True, position=True, intensity=True, prune_len=5, view_angle="LAO"):
        self.topology = topology
        self.position = position
        self.intensity = intensity
        self.prune_len = prune_len
        self.view_angle = view_angle

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> list[IndividualGraph]:
        config = FeatureConfig(
            topology=self.topology, position=self.position, intensity=self.intensity
        )
        graphs = []
        for item in X:
            if isinstance(item, tuple):
                mask, view = item
            else:
                mask, view = item, self.view_angle
            if not isinstance(mask, BinaryMask):
                raise GraphValidationError(
                    "SkeletonGraphExtractor expects BinaryMask inputs "
                    "(or (BinaryMask, view_angle) tuples)"
                )
            graphs.append(
                extract_graph(mask, config, view_angle=view, prune_len=self.prune_len)
            )
        return graphs


class GraphMatchingLabeler(BaseEstimator):
    """Artery labeler: graph matching against labeled templates.

    Parameters mirror :class:`~arterymatch.pipeline.TrainConfig`.  ``fit``
    takes fully labeled graphs (split labels); unless ``templates`` is given
    the training graphs double as the template set.  ``predict`` returns one
    list of base-class labels per input graph, ordered like its nodes.
    """

    def __init__(
        self,
        steps: int = 2000,
        lr: float = 1e-4,
        seed: int = 0,
        hidden: int = 64,
        attention_iters: int = 3,
        conv_iters: int = 2,
        decode: str = "hungarian",
        loss_every: int = 50,
    ):
        self.steps = steps
        self.lr = lr
        self.seed = seed
        self.hidden = hidden
        self.attention_iters = attention_iters
        self.conv_iters = conv_iters
        self.decode = decode
        self.loss_every = loss_every

    def _config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            lr=self.lr,
            seed=self.seed,
            hidden=self.hidden,
            attention_iters=self.attention_iters,
            conv_iters=self.conv_iters,
            loss_every=self.loss_every,
        )

    def fit(self, X, y=None, templates: list[IndividualGraph] | None = None):
        graphs = list(X)
        if not graphs:
            raise GraphValidationError("fit needs at least one labeled graph")
        self.params_, self.loss_curve_ = train(graphs, self._config())
        self.templates_ = list(templates) if templates is not None else graphs
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "This GraphMatchingLabeler instance is not fitted yet. "
                "Call 'fit' with labeled graphs first."
            )

    def predict_detail(self, X) -> list[InferenceResult]:
        self._check_fitted()
        return [
            infer_labels(self.params_, graph, self.templates_, decode=self.decode)
            for graph in X
        ]

    def predict(self, X) -> list[list[str]]:
        return [
            [entry.predicted for entry in result.per_node]
            for result in self.predict_detail(X)
        ]

    def score(self, X, y=None) -> float:
        """Support-weighted accuracy over the labeled graphs in X."""
        return self.evaluate(X).accuracy

    def evaluate(self, X) -> MetricsReport:
        self._check_fitted()
        outcomes: list[tuple[str, str]] = []
        for graph, result in zip(X, self.predict_detail(X)):
            for entry in result.per_node:
                if entry.true is None:
                    raise LabelError("evaluate/score need labeled test graphs")
                outcomes.append((entry.true, entry.predicted))
        return compute_metrics(outcomes)

    def _more_tags(self):
        return {"X_types": ["graphs"], "non_deterministic": False}
