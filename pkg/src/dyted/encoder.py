"""Structural-temporal backbone: a two-layer GCN per snapshot feeding a GRU.

Nodes carry no attributes, so the GCN input is a learned embedding table
(one-hot identity features times a weight matrix). A clip mask weight scales
each snapshot's GCN output before it enters the GRU.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .graph import DynamicGraph

__all__ = ["EncoderParams", "gcn_features", "encode_clip", "encode_sequence", "time_invariant_final"]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    embedding: ad.Tensor
    W1: ad.Tensor
    b1: ad.Tensor
    W2: ad.Tensor
    b2: ad.Tensor
    Wz: ad.Tensor
    Uz: ad.Tensor
    bz: ad.Tensor
    Wr: ad.Tensor
    Ur: ad.Tensor
    br: ad.Tensor
    Wn: ad.Tensor
    Un: ad.Tensor
    bn: ad.Tensor
    Wo: ad.Tensor
    bo: ad.Tensor

    @classmethod
    def init(cls, node_count: int, hidden: int, out_dim: int, rng=None) -> "EncoderParams":
        rng = np.random.default_rng(rng)
        h = hidden
        p = ad.parameter
        return cls(
            embedding=p(_glorot(rng, node_count, h)),
            W1=p(_glorot(rng, h, h)), b1=p(np.zeros(h)),
            W2=p(_glorot(rng, h, h)), b2=p(np.zeros(h)),
            Wz=p(_glorot(rng, h, h)), Uz=p(_glorot(rng, h, h)), bz=p(np.zeros(h)),
            Wr=p(_glorot(rng, h, h)), Ur=p(_glorot(rng, h, h)), br=p(np.zeros(h)),
            Wn=p(_glorot(rng, h, h)), Un=p(_glorot(rng, h, h)), bn=p(np.zeros(h)),
            Wo=p(_glorot(rng, h, out_dim)), bo=p(np.zeros(out_dim)),
        )

    @property
    def node_count(self) -> int:
        return self.embedding.shape[0]

    @property
    def hidden(self) -> int:
        return self.embedding.shape[1]

    @property
    def out_dim(self) -> int:
        return self.Wo.shape[1]

    def tensors(self) -> list[ad.Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name).data.copy() for f in fields(self)}

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "EncoderParams":
        return cls(**{f.name: ad.parameter(state[f.name]) for f in fields(cls)})


def _dense(x, W, b):
    return ad.bias_add(ad.matmul(x, W), b)


def gcn_features(params: EncoderParams, graph: DynamicGraph, t: int) -> ad.Tensor:
    """Two GCN layers on snapshot ``t`` (0-based)."""
    a_hat = graph[t].normalized
    h1 = ad.tanh(_dense(ad.spmm(a_hat, params.embedding), params.W1, params.b1))
    return ad.tanh(_dense(ad.spmm(a_hat, h1), params.W2, params.b2))


def _gru_step(params: EncoderParams, x, h):
    z = ad.sigmoid(ad.add(_dense(x, params.Wz, params.bz), ad.matmul(h, params.Uz)))
    r = ad.sigmoid(ad.add(_dense(x, params.Wr, params.br), ad.matmul(h, params.Ur)))
    n = ad.tanh(ad.add(_dense(x, params.Wn, params.bn), ad.matmul(ad.mul(r, h), params.Un)))
    return ad.add(ad.mul(ad.sub(1.0, z), n), ad.mul(z, h))


def _check_graph(params: EncoderParams, graph: DynamicGraph):
    if graph.node_count != params.node_count:
        raise ad.ShapeError("encode", f"graph has {graph.node_count} nodes, parameters expect {params.node_count}")


def _run_gru(params, feats, weights):
    h = ad.constant(np.zeros((params.node_count, params.hidden)))
    states = []
    for x, w in zip(feats, weights):
        if w is not None:
            x = ad.mul(x, w)
        h = _gru_step(params, x, h)
        states.append(h)
    return states


def _project(params, h):
    return _dense(h, params.Wo, params.bo)


def encode_clip(params: EncoderParams, graph: DynamicGraph, mask, t_i: int, L: int,
                features: list | None = None) -> ad.Tensor:
    """Encode the clip ``t_i .. t_i+L-1`` (0-based) to one ``(N, out_dim)`` table.

    ``mask`` holds one weight per snapshot in the clip and may be a tracked
    tensor. ``features`` lets callers reuse GCN outputs already computed for
    the same range.
    """
    _check_graph(params, graph)
    mask = ad.tensor(mask)
    if mask.shape != (L,):
        raise ad.ShapeError("encode_clip", f"mask shape {mask.shape} does not match clip length {L}")
    if t_i < 0 or t_i + L > graph.T:
        raise ad.ShapeError("encode_clip", f"clip [{t_i}, {t_i + L - 1}] outside {graph.T} snapshots")
    if features is None:
        features = [gcn_features(params, graph, t) for t in range(t_i, t_i + L)]
    weights = [ad.take(mask, j) for j in range(L)]
    return _project(params, _run_gru(params, features, weights)[-1])


def encode_sequence(params: EncoderParams, graph: DynamicGraph) -> list[ad.Tensor]:
    """Projected GRU state after every snapshot, one ``(N, out_dim)`` table per step."""
    _check_graph(params, graph)
    feats = [gcn_features(params, graph, t) for t in range(graph.T)]
    return [_project(params, h) for h in _run_gru(params, feats, [None] * graph.T)]


def time_invariant_final(params: EncoderParams, graph: DynamicGraph) -> ad.Tensor:
    """Encoding of the clip that spans every snapshot with unit weights."""
    return encode_clip(params, graph, np.ones(graph.T), 0, graph.T)
