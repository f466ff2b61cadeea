"""Bidirectional Bernoulli sampling of temporal clip pairs.

A clip range ``[t_i, t_j]`` of length ``L`` is drawn uniformly, then two clip
lengths are drawn i.i.d. from a truncated geometric law whose success
probability ``psi(L) = 1 - alpha * L / (L + 2)`` falls with the range. The
first clip grows forward from ``t_i``, the second backward from ``t_j``.

Length draws go through a Gumbel-softmax relaxation so that the soft masks
are differentiable in ``alpha``. The module also carries exact enumeration
oracles for the overlap statistics of a clip pair.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "TruncGeom", "SamplerParams", "ClipPair", "PairDistribution",
    "trunc_geom_pmf", "trunc_geom_mean", "psi",
    "length_log_probs", "gumbel_softmax", "suffix_mask", "clip_masks",
    "gumbel_max_lengths", "sample_hard_lengths",
    "sample_clip_pair", "enumerate_pair_distribution", "overlap_probability",
    "verify_proposition", "write_verify_csv",
]


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"success probability p={p} must lie in (0, 1)")


def _check_L(L: int) -> None:
    if int(L) != L or L < 1:
        raise ValueError(f"support bound L={L} must be a positive integer")


def trunc_geom_pmf(p: float, L: int) -> np.ndarray:
    """Probabilities of ``m = 1..L`` under the geometric law truncated to ``L``."""
    _check_p(p)
    _check_L(L)
    w = p * (1.0 - p) ** np.arange(L)
    return w / w.sum()


def trunc_geom_mean(p: float, L: int) -> float:
    """Closed-form mean ``1/p - L(1-p)^L / (1 - (1-p)^L)``."""
    _check_p(p)
    _check_L(L)
    q = (1.0 - p) ** L
    return 1.0 / p - L * q / (1.0 - q)


@dataclass(frozen=True)
class TruncGeom:
    p: float
    L: int

    def __post_init__(self):
        _check_p(self.p)
        _check_L(self.L)

    def pmf(self) -> np.ndarray:
        return trunc_geom_pmf(self.p, self.L)

    def mean(self) -> float:
        return trunc_geom_mean(self.p, self.L)


def psi(alpha: float, L: int) -> float:
    """Range-dependent success probability ``1 - alpha * L / (L + 2)``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha={alpha} must lie in (0, 1]")
    _check_L(L)
    return 1.0 - alpha * L / (L + 2.0)


@dataclass
class SamplerParams:
    """Learnable sampler state: ``alpha = sigmoid(alpha_raw)`` and the Gumbel temperature."""

    alpha_raw: ad.Tensor
    tau_g: float = 0.01

    @classmethod
    def from_alpha(cls, alpha: float, tau_g: float = 0.01) -> "SamplerParams":
        if not 0.0 < alpha < 1.0:
            raise ValueError("initial alpha must lie strictly inside (0, 1)")
        return cls(ad.parameter(np.array([np.log(alpha) - np.log1p(-alpha)])), tau_g)

    @property
    def alpha(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.alpha_raw.data[0])))


@dataclass
class ClipPair:
    """One sampled pair of soft-masked clips over the range ``[t_i, t_j]`` (0-based)."""

    t_i: int
    t_j: int
    L: int
    mask1: ad.Tensor
    mask2: ad.Tensor
    m1_hard: int
    m2_hard: int
    gumbel: np.ndarray | None = None
    uniform_lengths: bool = False

    def with_alpha(self, alpha_raw: ad.Tensor, tau_g: float) -> "ClipPair":
        """The same draw (range and Gumbel noise) with masks rebuilt from ``alpha_raw``."""
        if self.gumbel is None:
            raise ValueError("clip pair does not carry its Gumbel noise")
        logp = uniform_log_probs(self.L) if self.uniform_lengths else length_log_probs(alpha_raw, self.L)
        mask1, mask2, m1, m2 = clip_masks(logp, self.gumbel[0], self.gumbel[1], tau_g)
        return ClipPair(self.t_i, self.t_j, self.L, mask1, mask2, m1, m2, self.gumbel, self.uniform_lengths)

    @property
    def m1_soft(self) -> float:
        # the prefix mask sums to the soft expected length
        return float(self.mask1.data.sum())

    @property
    def m2_soft(self) -> float:
        return float(self.mask2.data.sum())

    def overlaps(self) -> bool:
        return self.m1_hard + self.m2_hard >= self.L + 1


def length_log_probs(alpha_raw: ad.Tensor, L: int) -> ad.Tensor:
    """Differentiable ``log f(m; psi(L), L)`` for ``m = 1..L``.

    With ``a = sigmoid(alpha_raw)`` and ``c = L/(L+2)``: ``p = 1 - a c``,
    ``1 - p = a c`` and ``log f(m) = log p + (m-1) log(a c) - log(1 - (a c)^L)``.
    """
    _check_L(L)
    c = L / (L + 2.0)
    one_minus_p = ad.scale(ad.sigmoid(alpha_raw), c)
    log_p = ad.log(1.0 - one_minus_p)
    log_q = ad.log(one_minus_p)
    log_norm = ad.log(1.0 - ad.exp(ad.scale(log_q, float(L))))
    steps = np.arange(L, dtype=np.float64)
    base = ad.sub(log_p, log_norm)
    return ad.add(ad.mul(ad.constant(np.ones(L)), base), ad.mul(ad.constant(steps), log_q))


def uniform_log_probs(L: int) -> ad.Tensor:
    return ad.constant(np.full(L, -np.log(L)))


def gumbel_softmax(log_probs: ad.Tensor, gumbel: np.ndarray, tau_g: float) -> ad.Tensor:
    """Relaxed one-hot ``softmax((log p + g) / tau_g)``; the noise is a constant."""
    if tau_g <= 0:
        raise ValueError("Gumbel temperature must be positive")
    return ad.softmax(ad.scale(ad.add(log_probs, ad.constant(gumbel)), 1.0 / tau_g))


def suffix_mask(k: ad.Tensor) -> ad.Tensor:
    """Suffix sums ``k_j + k_{j+1} + ... + k_L``: a relaxed prefix indicator."""
    L = k.shape[0]
    upper = np.triu(np.ones((L, L)))
    return ad.reshape(ad.matmul(ad.constant(upper), ad.reshape(k, (L, 1))), (L,))


def _reverse(x: ad.Tensor) -> ad.Tensor:
    return ad.take(x, slice(None, None, -1))


def clip_masks(log_probs: ad.Tensor, g1: np.ndarray, g2: np.ndarray, tau_g: float):
    """Soft masks of both clips plus their hard (Gumbel-max) lengths.

    ``mask1`` covers the first positions of the range, ``mask2`` the last.
    """
    k1 = gumbel_softmax(log_probs, g1, tau_g)
    k2 = gumbel_softmax(log_probs, g2, tau_g)
    m1, m2 = gumbel_max_lengths(log_probs.data, np.stack([g1, g2]))
    return suffix_mask(k1), _reverse(suffix_mask(k2)), int(m1), int(m2)


def gumbel_max_lengths(log_probs: np.ndarray, gumbel: np.ndarray) -> np.ndarray:
    """Hard lengths ``1 + argmax(log p + g)`` along the last axis of ``gumbel``."""
    return np.argmax(np.asarray(log_probs) + gumbel, axis=-1) + 1


def sample_hard_lengths(params: "SamplerParams", L: int, size: int, rng=None) -> np.ndarray:
    """``size`` hard clip lengths at range ``L`` without building masks."""
    rng = np.random.default_rng(rng)
    logp = length_log_probs(params.alpha_raw, L).data
    return gumbel_max_lengths(logp, rng.gumbel(size=(size, L)))


def sample_clip_pair(T: int, params: SamplerParams, rng=None, *, L: int | None = None,
                     uniform_lengths: bool = False) -> ClipPair:
    """Draw a clip range and two Gumbel-softmax clip masks.

    ``L`` is uniform on ``1..T`` unless given; the start is uniform over every
    position that keeps the range inside the sequence. ``uniform_lengths``
    swaps the truncated geometric law for a uniform one (an ablation) and cuts
    the gradient path to ``alpha``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(rng)
    if L is None:
        L = int(rng.integers(1, T + 1))
    elif not 1 <= L <= T:
        raise ValueError(f"clip range {L} outside 1..{T}")
    t_i = int(rng.integers(0, T - L + 1))
    g = rng.gumbel(size=(2, L))
    logp = uniform_log_probs(L) if uniform_lengths else length_log_probs(params.alpha_raw, L)
    mask1, mask2, m1, m2 = clip_masks(logp, g[0], g[1], params.tau_g)
    return ClipPair(t_i, t_i + L - 1, L, mask1, mask2, m1, m2, g, uniform_lengths)


# ---------------------------------------------------------------------------
# exact overlap statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairDistribution:
    joint: np.ndarray  # joint[m1-1, m2-1]
    p_overlap: float
    p_disjoint: float


def enumerate_pair_distribution(p: float, L: int) -> PairDistribution:
    """Brute-force joint law of ``(m1, m2)`` and the overlap probability.

    The clips ``[1, m1]`` and ``[L - m2 + 1, L]`` share a snapshot exactly
    when ``m1 + m2 >= L + 1``.
    """
    f = trunc_geom_pmf(p, L)
    joint = np.outer(f, f)
    p1 = p0 = 0.0
    for m1 in range(1, L + 1):
        for m2 in range(1, L + 1):
            if m1 + m2 >= L + 1:
                p1 += joint[m1 - 1, m2 - 1]
            else:
                p0 += joint[m1 - 1, m2 - 1]
    return PairDistribution(joint, p1, p0)


def overlap_probability(p: float, L: int) -> tuple[float, float]:
    """Closed forms of ``(Pr(X=1 | L), Pr(X=0 | L))``."""
    _check_p(p)
    _check_L(L)
    q = 1.0 - p
    phi = 1.0 - q ** L
    p1 = (p * L * q ** (L - 1) - q ** L + q ** (2 * L)) / phi ** 2
    p0 = (1.0 - q ** L - p * L * q ** (L - 1)) / phi ** 2
    return p1, p0


# Ratios that sit exactly on the proof's boundary (alpha = 1) can miss 1.0
# by rounding error.
_SLACK = 1e-12


def verify_proposition(alphas, L_values, *, check_closed_form: bool = True) -> list[dict]:
    """Check the three overlap inequalities by exact enumeration.

    For each ``(alpha, l)`` row, ``ratio1 = Pr(X=1|l) / Pr(X=0|l)`` and the
    range ratios ``Pr(L=l+1|X) / Pr(L=l|X)`` under a uniform range prior.
    Those are evaluated twice, once holding ``p = psi(l)`` fixed and once
    with ``p`` re-evaluated at ``l+1`` as the sampler does; ``ratio2_min``
    and ``ratio3_max`` keep the worst of the two.

    Raises
    ------
    ValueError
        When some ``l < 3`` or ``alpha`` is outside ``(0, 1]``.
    """
    rows = []
    for alpha in alphas:
        for l in L_values:
            if l < 3:
                raise ValueError(f"L={l}: the overlap inequalities need L >= 3")
            p_l = psi(alpha, l)
            if not 2.0 / (l + 2.0) - _SLACK <= p_l < 1.0:
                raise ValueError(f"p={p_l} outside [2/(L+2), 1)")
            here = enumerate_pair_distribution(p_l, l)
            nxt_fixed = enumerate_pair_distribution(p_l, l + 1)
            nxt_psi = enumerate_pair_distribution(psi(alpha, l + 1), l + 1)
            if check_closed_form:
                for p, ll, dist in ((p_l, l, here), (p_l, l + 1, nxt_fixed)):
                    c1, c0 = overlap_probability(p, ll)
                    if abs(c1 - dist.p_overlap) > 1e-10 or abs(c0 - dist.p_disjoint) > 1e-10:
                        raise AssertionError(f"closed form disagrees with enumeration at p={p}, L={ll}")
            ratio1 = here.p_overlap / here.p_disjoint
            ratio2 = min(nxt_fixed.p_disjoint / here.p_disjoint, nxt_psi.p_disjoint / here.p_disjoint)
            ratio3 = max(nxt_fixed.p_overlap / here.p_overlap, nxt_psi.p_overlap / here.p_overlap)
            ok = ratio1 <= 1.0 + _SLACK and ratio2 >= 1.0 - _SLACK and ratio3 <= 1.0 + _SLACK
            rows.append({"alpha": float(alpha), "L": int(l), "ratio1": ratio1,
                         "ratio2_min": ratio2, "ratio3_max": ratio3, "pass": bool(ok)})
    return rows


VERIFY_COLUMNS = ("alpha", "L", "ratio1", "ratio2_min", "ratio3_max", "pass")


def write_verify_csv(rows, stream: io.TextIOBase) -> None:
    writer = csv.DictWriter(stream, fieldnames=VERIFY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["pass"] = "true" if row["pass"] else "false"
        writer.writerow(out)
