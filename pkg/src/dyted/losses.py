"""Contrastive, predictive and adversarial objectives.

All losses take their random draws (negatives, discriminator samples) as
plain integer arrays so that a loss is a deterministic function of its
inputs; the ``sample_*`` helpers produce those arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .graph import DynamicGraph, Snapshot

__all__ = [
    "logsumexp_rows", "info_nce", "loss_time_invariant", "loss_structure_proximity",
    "loss_link_prediction", "DiscriminatorParams", "discriminator_forward",
    "discriminator_value", "discriminator_inputs", "sample_uniform_negatives",
    "sample_non_neighbors", "sample_non_edges", "sample_disentangle_pairs",
]

D_CLAMP = 1e-7


def logsumexp_rows(x: ad.Tensor) -> ad.Tensor:
    """Row-wise ``log(sum(exp(x)))`` with the max shifted out as a constant."""
    m = np.max(x.data, axis=-1, keepdims=True)
    shifted = ad.sub(x, ad.constant(np.broadcast_to(m, x.shape)))
    return ad.add(ad.log(ad.sum(ad.exp(shifted), axis=-1)), ad.constant(m[:, 0]))


def info_nce(pos: ad.Tensor, neg: ad.Tensor, tau: float) -> ad.Tensor:
    """Mean of ``-log(e^{pos/tau} / (e^{pos/tau} + sum_j e^{neg_j/tau}))``.

    ``pos`` has shape ``(B,)`` and ``neg`` shape ``(B, n)``.
    """
    B = pos.shape[0]
    logits = ad.scale(ad.concat([ad.reshape(pos, (B, 1)), neg]), 1.0 / tau)
    return ad.mean(ad.sub(logsumexp_rows(logits), ad.scale(pos, 1.0 / tau)))


def _pair_cosines(X: ad.Tensor, Y: ad.Tensor, anchors: np.ndarray, others: np.ndarray) -> ad.Tensor:
    """Cosines ``sim(X[anchors[b]], Y[others[b, j]])`` shaped like ``others``."""
    B, n = others.shape
    a = ad.take(X, np.repeat(anchors, n))
    o = ad.take(Y, others.reshape(-1))
    return ad.reshape(ad.cosine_similarity(a, o), (B, n))


def loss_time_invariant(S1: ad.Tensor, S2: ad.Tensor, batch, negatives=None, tau: float = 0.1,
                        mode: str = "sampled") -> ad.Tensor:
    """Temporal-clip contrast between the two clip encodings of each node.

    ``mode="sampled"`` (default) puts the positive pair plus ``negatives``
    (shape ``(B, n)``, drawn from the other nodes) in the denominator.
    ``mode="full"`` sums ``exp(sim(s1_v, s1_u)/tau)`` over every node ``u``
    of clip 1 (including ``v`` itself) and leaves the positive pair out of
    the denominator; that form is not bounded below by zero.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1)
    if batch.size == 0:
        raise ValueError("loss_time_invariant needs a non-empty node batch")
    pos = ad.cosine_similarity(ad.take(S1, batch), ad.take(S2, batch))
    if mode == "sampled":
        if negatives is None:
            raise ValueError("sampled mode needs negatives")
        negatives = np.asarray(negatives, dtype=np.int64).reshape(batch.size, -1)
        return info_nce(pos, _pair_cosines(S1, S1, batch, negatives), tau)
    if mode == "full":
        N = S1.shape[0]
        everyone = np.tile(np.arange(N), (batch.size, 1))
        logits = ad.scale(_pair_cosines(S1, S1, batch, everyone), 1.0 / tau)
        return ad.mean(ad.sub(logsumexp_rows(logits), ad.scale(pos, 1.0 / tau)))
    raise ValueError(f"unknown mode {mode!r}")


def loss_structure_proximity(R: list, graph: DynamicGraph, negatives: list, tau: float = 0.1) -> ad.Tensor:
    """Edge-level contrast summed over snapshots.

    For snapshot ``t`` every edge ``(u, v)`` is a positive pair and
    ``negatives[t]`` (shape ``(|E_t|, n)``) lists non-neighbours of the
    anchor ``u``. Snapshots without edges contribute zero.
    """
    total = ad.constant(0.0)
    for t, snap in enumerate(graph.snapshots):
        if snap.num_edges == 0:
            continue
        anchors, pos_nodes = snap.edges[:, 0], snap.edges[:, 1]
        pos = ad.cosine_similarity(ad.take(R[t], anchors), ad.take(R[t], pos_nodes))
        neg = _pair_cosines(R[t], R[t], anchors, np.asarray(negatives[t]))
        total = ad.add(total, info_nce(pos, neg, tau))
    return total


def loss_link_prediction(R: list, graph: DynamicGraph, negatives: list) -> ad.Tensor:
    """Next-snapshot binary cross-entropy on inner products.

    Representations at step ``t`` score the edges of step ``t+1`` against
    ``negatives[t]``, an ``(k, 2)`` array of non-edges of step ``t+1``.
    """
    if graph.T < 2:
        raise ValueError("link-prediction pretext needs at least two snapshots")
    total = ad.constant(0.0)
    for t in range(graph.T - 1):
        nxt = graph[t + 1]
        if nxt.num_edges:
            u, v = nxt.edges[:, 0], nxt.edges[:, 1]
            dots = ad.rowwise_dot(ad.take(R[t], u), ad.take(R[t], v))
            total = ad.sub(total, ad.mean(ad.log_sigmoid(dots)))
        neg = np.asarray(negatives[t]).reshape(-1, 2)
        if len(neg):
            dots = ad.rowwise_dot(ad.take(R[t], neg[:, 0]), ad.take(R[t], neg[:, 1]))
            total = ad.sub(total, ad.mean(ad.log_sigmoid(ad.scale(dots, -1.0))))
    return total


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------

@dataclass
class DiscriminatorParams:
    """One-hidden-layer MLP scoring whether ``(s, d)`` come from the same node."""

    W1: ad.Tensor
    b1: ad.Tensor
    W2: ad.Tensor
    b2: ad.Tensor

    @classmethod
    def init(cls, d: int, rng=None) -> "DiscriminatorParams":
        rng = np.random.default_rng(rng)
        lim1 = np.sqrt(6.0 / (2 * d))
        lim2 = np.sqrt(6.0 / (d + 1))
        return cls(ad.parameter(rng.uniform(-lim1, lim1, (d, d))), ad.parameter(np.zeros(d)),
                   ad.parameter(rng.uniform(-lim2, lim2, (d, 1))), ad.parameter(np.zeros(1)))

    def tensors(self) -> list[ad.Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name).data.copy() for f in fields(self)}

    @classmethod
    def from_state_dict(cls, state) -> "DiscriminatorParams":
        return cls(**{f.name: ad.parameter(state[f.name]) for f in fields(cls)})


def discriminator_forward(D: DiscriminatorParams, x) -> ad.Tensor:
    """Probabilities in ``(0, 1)`` for each row of ``x``."""
    h = ad.tanh(ad.bias_add(ad.matmul(x, D.W1), D.b1))
    logit = ad.bias_add(ad.matmul(h, D.W2), D.b2)
    return ad.reshape(ad.sigmoid(logit), (x.shape[0],))


def discriminator_value(D: DiscriminatorParams, true_samples, false_samples) -> ad.Tensor:
    """``V = mean(log D(r)) + mean(log(1 - D(z)))``; outputs clamped away from 0 and 1."""
    true_samples, false_samples = ad.tensor(true_samples), ad.tensor(false_samples)
    if true_samples.shape[0] != false_samples.shape[0]:
        raise ValueError("need as many false samples as true samples")
    d_true = ad.clip(discriminator_forward(D, true_samples), D_CLAMP, 1.0 - D_CLAMP)
    d_false = ad.clip(discriminator_forward(D, false_samples), D_CLAMP, 1.0 - D_CLAMP)
    return ad.add(ad.mean(ad.log(d_true)), ad.mean(ad.log(ad.sub(1.0, d_false))))


def discriminator_inputs(S: ad.Tensor, D_steps: list, v, t, u):
    """True rows ``(s_v, d_v^t)`` and false rows ``(s_v, d_u^t)``."""
    N = S.shape[0]
    stacked = ad.concat(list(D_steps), axis=0)
    s = ad.take(S, v)
    true = ad.concat([s, ad.take(stacked, t * N + v)])
    false = ad.concat([s, ad.take(stacked, t * N + u)])
    return true, false


# ---------------------------------------------------------------------------
# samplers for the arrays the losses consume
# ---------------------------------------------------------------------------

def sample_uniform_negatives(batch, node_count: int, n: int, rng) -> np.ndarray:
    """``n`` nodes per anchor, uniform over all nodes except the anchor."""
    batch = np.asarray(batch, dtype=np.int64)
    draws = rng.integers(0, node_count - 1, size=(batch.size, n))
    # shift past the anchor to exclude it without rejection
    return draws + (draws >= batch[:, None])


def sample_non_neighbors(snap: Snapshot, anchors, n: int, rng, max_rounds: int = 10) -> np.ndarray:
    """``n`` uniform nodes per anchor that are neither the anchor nor its neighbours.

    Rejected draws are redrawn a few times; anchors adjacent to nearly every
    node may keep a leftover neighbour.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    N = snap.node_count
    out = sample_uniform_negatives(anchors, N, n, rng)
    adj = snap.adjacency
    for _ in range(max_rounds):
        rows = np.repeat(anchors, n)
        bad = np.asarray(adj[rows, out.reshape(-1)]).reshape(out.shape) > 0
        if not bad.any():
            break
        redraw = sample_uniform_negatives(anchors, N, n, rng)
        out = np.where(bad, redraw, out)
    return out


def sample_non_edges(snap: Snapshot, k: int, rng, exclude_self: bool = True) -> np.ndarray:
    """``k`` uniformly drawn node pairs that are not edges of ``snap``."""
    N = snap.node_count
    if N < 2 or k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    out = np.zeros((0, 2), dtype=np.int64)
    adj = snap.adjacency
    for _ in range(100):
        need = k - len(out)
        if need <= 0:
            break
        cand = rng.integers(0, N, size=(2 * need + 8, 2))
        ok = cand[:, 0] != cand[:, 1] if exclude_self else np.ones(len(cand), bool)
        cand = cand[ok]
        ok = np.asarray(adj[cand[:, 0], cand[:, 1]]).ravel() == 0
        out = np.concatenate([out, cand[ok][:need]])
    return out[:k]


def sample_disentangle_pairs(node_count: int, T: int, n_prime: int, rng):
    """Indices ``(v, t, u)`` with ``u != v`` for discriminator samples."""
    v = rng.integers(0, node_count, size=n_prime)
    t = rng.integers(0, T, size=n_prime)
    u = rng.integers(0, node_count - 1, size=n_prime)
    u = u + (u >= v)
    return v, t, u
