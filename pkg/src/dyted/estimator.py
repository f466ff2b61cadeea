"""Scikit-learn style wrappers around training and extraction.

``fit`` takes a :class:`~dyted.graph.DynamicGraph` (or a list of edge
arrays plus ``node_count``) and ``transform`` returns node features for one
snapshot, selected by the ``variant`` parameter.
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import variant_features
from .graph import DynamicGraph
from .training import TrainConfig, extract_representations, train, train_backbone

__all__ = ["check_dynamic_graph", "DyTedEmbedder", "BackboneEmbedder"]


def check_dynamic_graph(X, node_count: int | None = None) -> DynamicGraph:
    """Coerce ``X`` to a non-empty :class:`DynamicGraph`.

    ``X`` may already be a graph or a sequence of ``(k, 2)`` integer edge
    arrays, one per snapshot; in the latter case ``node_count`` defaults to
    one more than the largest index.
    """
    if isinstance(X, DynamicGraph):
        graph = X
    else:
        try:
            lists = [np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in X]
        except (TypeError, ValueError) as exc:
            raise ValueError(f"expected a DynamicGraph or a sequence of edge arrays: {exc}") from None
        if node_count is None:
            node_count = 1 + max((int(e.max()) for e in lists if e.size), default=-1)
        graph = DynamicGraph.from_edge_lists(node_count, lists)
    if graph.T < 1:
        raise ValueError("dynamic graph needs at least one snapshot")
    if graph.node_count < 2:
        raise ValueError(f"dynamic graph needs at least 2 nodes, got {graph.node_count}")
    return graph


class _EmbedderBase(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    _variants: tuple = ()

    def _config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def transform(self, X=None, t: int | None = None) -> np.ndarray:
        """Features for snapshot ``t`` (default: last) of the fitted graph.

        ``X`` is accepted for pipeline compatibility and must be ``None`` or
        the graph passed to :meth:`fit`.
        """
        check_is_fitted(self, "representations_")
        if X is not None and check_dynamic_graph(X, self.graph_.node_count) != self.graph_:
            raise ValueError("transform only supports the graph seen in fit")
        if self.variant not in self._variants:
            raise ValueError(f"variant must be one of {self._variants}, got {self.variant!r}")
        return variant_features(self.representations_, self.variant, t)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform()


class DyTedEmbedder(_EmbedderBase):
    """Disentangled embedder: time-invariant ``S`` and time-varying ``D``.

    Parameters mirror :class:`~dyted.training.TrainConfig`; ``variant``
    picks what :meth:`transform` returns (``"combine"``, ``"time-invariant"``,
    ``"time-varying"`` or ``"pooled"``).
    """

    _variants = ("combine", "time-invariant", "time-varying", "pooled")

    def __init__(self, d=16, tau=0.1, tau_g=0.01, lambda1=0.5, lambda2=0.5, lambda3=5e-7,
                 n=5, n_prime=256, k_D=1, pretext="structure-proximity", learning_rate=0.01,
                 epochs=200, seed=0, alpha_init=0.5, sampling="bernoulli",
                 time_invariant_mode="sampled", variant="combine"):
        self.d = d
        self.tau = tau
        self.tau_g = tau_g
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.n = n
        self.n_prime = n_prime
        self.k_D = k_D
        self.pretext = pretext
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.alpha_init = alpha_init
        self.sampling = sampling
        self.time_invariant_mode = time_invariant_mode
        self.variant = variant

    def fit(self, X, y=None, node_count=None):
        self.graph_ = check_dynamic_graph(X, node_count)
        self.result_ = train(self._config(), self.graph_)
        self.representations_ = extract_representations(self.result_.time_invariant,
                                                        self.result_.time_varying, self.graph_)
        self.history_ = self.result_.history
        self.alpha_ = self.result_.sampler.alpha
        return self


class BackboneEmbedder(_EmbedderBase):
    """The same encoder at full width ``d`` trained on the pretext loss alone."""

    _variants = ("baseline", "time-varying", "pooled")

    def __init__(self, d=16, tau=0.1, lambda3=5e-7, n=5, pretext="structure-proximity",
                 learning_rate=0.01, epochs=200, seed=0, variant="baseline"):
        self.d = d
        self.tau = tau
        self.lambda3 = lambda3
        self.n = n
        self.pretext = pretext
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.variant = variant

    def fit(self, X, y=None, node_count=None):
        self.graph_ = check_dynamic_graph(X, node_count)
        self.result_ = train_backbone(self._config(), self.graph_)
        self.representations_ = extract_representations(None, self.result_.time_varying, self.graph_)
        self.history_ = self.result_.history
        return self
