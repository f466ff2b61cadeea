import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dyted.estimator import BackboneEmbedder, DyTedEmbedder, check_dynamic_graph
from dyted.graph import DynamicGraph, PlantedConfig, generate_planted


@pytest.fixture(scope="module")
def graph():
    g, _, _ = generate_planted(PlantedConfig(node_count=25, T=3, seed=4, edge_base_rate=0.04))
    return g


def test_check_dynamic_graph():
    g = check_dynamic_graph([[(0, 1)], np.array([[1, 3]])])
    assert g.node_count == 4 and g.T == 2
    assert check_dynamic_graph([[(0, 1)]], node_count=6).node_count == 6
    assert check_dynamic_graph(g) is g
    with pytest.raises(ValueError):
        check_dynamic_graph([[(0, 0, 1)]])
    with pytest.raises(ValueError):
        check_dynamic_graph([[]])
    with pytest.raises(ValueError):
        check_dynamic_graph([])


def test_params_round_trip_and_clone():
    est = DyTedEmbedder(d=8, lambda2=1.0, variant="time-invariant")
    assert est.get_params()["lambda2"] == 1.0
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(epochs=3)
    assert est.epochs == 3


def test_dyted_fit_transform_variants(graph):
    est = DyTedEmbedder(d=6, epochs=2, n_prime=16, variant="combine")
    X = est.fit_transform(graph)
    assert X.shape == (25, 6)
    assert len(est.history_) == 2 and 0 < est.alpha_ < 1
    S = est.set_params(variant="time-invariant").transform()
    D0 = est.set_params(variant="time-varying").transform(t=0)
    assert S.shape == (25, 3) and D0.shape == (25, 3)
    np.testing.assert_array_equal(X, np.hstack([S, est.transform(t=2)]))
    assert est.transform(graph).shape == (25, 3)
    with pytest.raises(ValueError):
        est.transform(DynamicGraph.from_edge_lists(25, [[(0, 1)]] * 3))
    with pytest.raises(ValueError):
        est.set_params(variant="baseline").transform()


def test_fit_is_deterministic(graph):
    a = DyTedEmbedder(d=4, epochs=2, n_prime=8).fit(graph).transform()
    b = DyTedEmbedder(d=4, epochs=2, n_prime=8).fit(graph).transform()
    np.testing.assert_array_equal(a, b)


def test_backbone_embedder(graph):
    est = BackboneEmbedder(d=6, epochs=2).fit([s.edges for s in graph], node_count=25)
    assert est.transform().shape == (25, 6)
    assert est.set_params(variant="pooled").transform().shape == (25, 6)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        DyTedEmbedder().transform()
