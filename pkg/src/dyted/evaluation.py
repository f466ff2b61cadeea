"""Downstream probes, metrics, mutual-information measurement and sweeps.

Representations are frozen; every probe is fit on top of them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import average_precision_score, f1_score, roc_auc_score
from sklearn.neural_network import MLPClassifier
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted, check_X_y

from .graph import DynamicGraph, LabelTable, perturb_edges
from .losses import sample_non_edges
from .training import RepresentationSet, TrainConfig, extract_representations, train, train_backbone

__all__ = [
    "VARIANTS", "EvalReport", "auc_score", "average_precision", "f1_scores",
    "SoftmaxProbe", "split_indices", "eval_link_prediction", "link_prediction_pairs",
    "eval_node_classification", "variant_features", "estimate_mi", "representation_mi",
    "METRIC_COLUMNS", "write_metrics", "fit_variants", "evaluate_variants",
    "next_snapshot_link_prediction", "SWEEP_KINDS", "SWEEP_COLUMNS", "sweep",
]

VARIANTS = ("combine", "time-invariant", "time-varying", "baseline", "pooled")
METRIC_COLUMNS = ("task", "variant", "seed", "metric", "value")


@dataclass
class EvalReport:
    task: str
    variant: str
    seed: int
    metrics: dict[str, float] = field(default_factory=dict)
    split: tuple = (0.2, 0.2, 0.6)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for k, v in self.metrics.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric {k}={v} outside [0, 1]")

    def rows(self):
        for metric, value in self.metrics.items():
            yield {"task": self.task, "variant": self.variant, "seed": self.seed,
                   "metric": metric, "value": value}


def write_metrics(reports, stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        writer.writerows(report.rows())


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def auc_score(y_true, scores) -> float:
    y_true = np.asarray(y_true)
    if len(np.unique(y_true)) < 2:
        raise ValueError("AUC needs both classes")
    return float(roc_auc_score(y_true, scores))


def average_precision(y_true, scores) -> float:
    return float(average_precision_score(y_true, scores))


def f1_scores(y_true, y_pred) -> dict[str, float]:
    return {"micro_f1": float(f1_score(y_true, y_pred, average="micro")),
            "macro_f1": float(f1_score(y_true, y_pred, average="macro"))}


def split_indices(n: int, fractions=(0.2, 0.2, 0.6), seed=None, stratify=None):
    """Shuffle ``range(n)`` into train / validation / test index arrays.

    With ``stratify`` (a label array) each class is split separately.
    """
    rng = np.random.default_rng(seed)
    fr = np.asarray(fractions, dtype=float)
    fr = fr / fr.sum()
    groups = [np.arange(n)] if stratify is None else [np.flatnonzero(stratify == c) for c in np.unique(stratify)]
    parts = [[], [], []]
    for idx in groups:
        idx = rng.permutation(idx)
        a = int(round(fr[0] * len(idx)))
        b = a + int(round(fr[1] * len(idx)))
        for part, chunk in zip(parts, (idx[:a], idx[a:b], idx[b:])):
            part.append(chunk)
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

class SoftmaxProbe(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier trained by full-batch Adam with early stopping.

    When validation data is passed to :meth:`fit`, the weights with the best
    validation accuracy are kept and training stops after ``patience``
    epochs without improvement.
    """

    def __init__(self, learning_rate=0.05, max_epochs=500, patience=50, l2=1e-4, seed=0):
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.scaler_ = StandardScaler().fit(X)
        Z = self.scaler_.transform(X)
        n, k = Z.shape
        c = len(self.classes_)
        rng = np.random.default_rng(self.seed)
        W = rng.normal(scale=0.01, size=(k, c))
        b = np.zeros(c)
        Y = np.eye(c)[y_idx]
        m = [np.zeros_like(W), np.zeros_like(b)]
        v = [np.zeros_like(W), np.zeros_like(b)]
        best = (-1.0, W.copy(), b.copy())
        stale = 0
        for epoch in range(1, self.max_epochs + 1):
            logits = Z @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            P = np.exp(logits)
            P /= P.sum(axis=1, keepdims=True)
            G = (P - Y) / n
            grads = [Z.T @ G + self.l2 * W, G.sum(axis=0)]
            for i, (p, g) in enumerate(zip((W, b), grads)):
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                p -= self.learning_rate * (m[i] / (1 - 0.9 ** epoch)) / (np.sqrt(v[i] / (1 - 0.999 ** epoch)) + 1e-8)
            if X_val is not None and len(X_val):
                self.coef_, self.intercept_ = W, b
                acc = float(np.mean(self.predict(X_val) == np.asarray(y_val)))
                if acc > best[0]:
                    best, stale = (acc, W.copy(), b.copy()), 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
        if X_val is not None and len(X_val):
            W, b = best[1], best[2]
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return self.scaler_.transform(np.asarray(X, dtype=float)) @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def eval_node_classification(X, y, seed=0, split=(0.2, 0.2, 0.6), hidden_width: int | None = None,
                             train_fraction: float = 1.0, repeats: int = 1) -> dict[str, float]:
    """Micro/macro F1 of a probe on frozen features.

    ``hidden_width`` switches the linear probe for a one-hidden-layer MLP;
    ``train_fraction`` keeps only part of the training split. With
    ``repeats > 1`` the scores are averaged over that many random splits
    (seeds ``seed, seed+1, ...``).

    Raises
    ------
    ValueError
        If a class present in ``y`` has no training example.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if repeats > 1:
        runs = [eval_node_classification(X, y, seed + i, split, hidden_width, train_fraction)
                for i in range(repeats)]
        return {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
    tr, va, te = split_indices(len(y), split, seed, stratify=y)
    if train_fraction < 1.0:
        rng = np.random.default_rng(seed + 1)
        tr = np.sort(rng.choice(tr, size=max(1, int(round(train_fraction * len(tr)))), replace=False))
    missing = set(np.unique(y)) - set(np.unique(y[tr]))
    if missing:
        raise ValueError(f"classes {sorted(missing)} have no training example")
    if hidden_width:
        clf = MLPClassifier(hidden_layer_sizes=(hidden_width,), max_iter=500, random_state=seed)
        scaler = StandardScaler().fit(X[tr])
        clf.fit(scaler.transform(X[tr]), y[tr])
        pred = clf.predict(scaler.transform(X[te]))
    else:
        probe = SoftmaxProbe(seed=seed).fit(X[tr], y[tr], X[va], y[va])
        pred = probe.predict(X[te])
    return f1_scores(y[te], pred)


def link_prediction_pairs(target, seed=0):
    """Positive edges of ``target`` and as many uniformly drawn non-edges."""
    rng = np.random.default_rng(seed)
    pos = target.edges
    neg = sample_non_edges(target, len(pos), rng)
    return pos, neg


def eval_link_prediction(reps, pos_edges, neg_edges, split=(0.2, 0.2, 0.6), seed=0,
                         hidden_width: int | None = None, train_fraction: float = 1.0) -> dict[str, float]:
    """AUC/AP of a classifier on Hadamard products of node vectors.

    Logistic regression by default; ``hidden_width`` swaps in a
    one-hidden-layer MLP and ``train_fraction`` subsamples the training split.
    """
    reps = np.asarray(reps, dtype=float)
    pos_edges = np.asarray(pos_edges).reshape(-1, 2)
    neg_edges = np.asarray(neg_edges).reshape(-1, 2)
    pairs = np.concatenate([pos_edges, neg_edges])
    y = np.concatenate([np.ones(len(pos_edges)), np.zeros(len(neg_edges))])
    if len(np.unique(y)) < 2:
        raise ValueError("link prediction needs positive and negative pairs")
    feats = reps[pairs[:, 0]] * reps[pairs[:, 1]]
    tr, va, te = split_indices(len(y), split, seed, stratify=y)
    if train_fraction < 1.0:
        rng = np.random.default_rng(seed + 1)
        tr = np.sort(rng.choice(tr, size=max(2, int(round(train_fraction * len(tr)))), replace=False))
    if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
        raise ValueError("degenerate single-class split")
    if hidden_width:
        clf = MLPClassifier(hidden_layer_sizes=(hidden_width,), max_iter=500, random_state=seed)
        scores = clf.fit(feats[tr], y[tr]).predict_proba(feats[te])[:, 1]
    else:
        clf = LogisticRegression(max_iter=2000).fit(feats[tr], y[tr])
        scores = clf.decision_function(feats[te])
    return {"auc": auc_score(y[te], scores), "ap": average_precision(y[te], scores)}


def variant_features(reps: RepresentationSet, variant: str, t: int | None = None) -> np.ndarray:
    """Node features of one representation variant at step ``t`` (default: last)."""
    t = reps.T - 1 if t is None else t
    if variant == "time-invariant":
        return reps.S
    if variant == "time-varying" or variant == "baseline":
        return reps.D[t]
    if variant == "combine":
        return reps.combined(t)
    if variant == "pooled":
        return reps.D.mean(axis=0)
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# mutual information
# ---------------------------------------------------------------------------

def estimate_mi(X, Y, k: int = 3) -> float:
    """Kraskov (KSG, first estimator) mutual information in nats, floored at 0.

    Distances use the max-norm in the joint and marginal spaces.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(X)
    if len(Y) != n:
        raise ValueError("X and Y need the same number of samples")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} samples for k={k}")
    joint = np.hstack([X, Y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    eps = np.nextafter(dist[:, -1], 0)
    nx = cKDTree(X).query_ball_point(X, eps, p=np.inf, return_length=True) - 1
    ny = cKDTree(Y).query_ball_point(Y, eps, p=np.inf, return_length=True) - 1
    mi = digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1))
    return max(0.0, float(mi))


def representation_mi(reps: RepresentationSet, k: int = 3) -> float:
    """Mean over snapshots of ``MI(s_v, d_v^t)`` estimated across nodes.

    Each per-snapshot estimate sees every node once; pooling all ``(v, t)``
    pairs instead would repeat each ``s_v`` ``T`` times and let the
    neighbour search match a node with itself at other steps.
    """
    if reps.S.shape[1] == 0:
        raise ValueError("representation set has no time-invariant part")
    return float(np.mean([estimate_mi(reps.S, reps.D[t], k) for t in range(reps.T)]))


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------

def fit_variants(config: TrainConfig, graph: DynamicGraph, variants=VARIANTS) -> dict[str, RepresentationSet]:
    """Train what ``variants`` need; map each variant to its representation set.

    The disentangled model is trained once and shared by every non-baseline
    variant; ``"baseline"`` trains the plain backbone with the same config.
    """
    out = {}
    if any(v != "baseline" for v in variants):
        res = train(config, graph)
        reps = extract_representations(res.time_invariant, res.time_varying, graph)
        out.update({v: reps for v in variants if v != "baseline"})
    if "baseline" in variants:
        res = train_backbone(config, graph)
        out["baseline"] = extract_representations(None, res.time_varying, graph)
    return out


def evaluate_variants(reps: dict, *, target=None, labels: LabelTable | None = None, seed: int = 0,
                      hidden_width: int | None = None, train_fraction: float = 1.0) -> list[EvalReport]:
    """Link prediction on ``target`` and/or node classification on ``labels``.

    Link prediction scores the edges of ``target`` (a snapshot after the
    training range) from features at the last training step. Static labels
    are probed at the last step; per-snapshot labels over every ``(v, t)``.
    """
    reports = []
    if target is not None:
        pos, neg = link_prediction_pairs(target, seed)
        for variant, rs in reps.items():
            m = eval_link_prediction(variant_features(rs, variant), pos, neg, seed=seed,
                                     hidden_width=hidden_width, train_fraction=train_fraction)
            reports.append(EvalReport("link", variant, seed, m))
    if labels is not None:
        for variant, rs in reps.items():
            if labels.kind == "static":
                X = variant_features(rs, variant)[labels.nodes]
            else:
                X = np.stack([variant_features(rs, variant, int(t))[v] for v, t in zip(labels.nodes, labels.times)])
            m = eval_node_classification(X, labels.labels, seed=seed, hidden_width=hidden_width,
                                         train_fraction=train_fraction)
            reports.append(EvalReport("node", variant, seed, m))
    return reports


def next_snapshot_link_prediction(config: TrainConfig, graph: DynamicGraph, variants=("combine", "baseline"),
                                  seed: int = 0, noise: float = 0.0) -> dict[str, float]:
    """Train on snapshots ``1..T-1`` and score the edges of snapshot ``T``.

    ``noise`` perturbs the training snapshots only (percentage, as in
    :func:`~dyted.graph.perturb_edges`); the target snapshot stays clean.
    Returns the test AUC per variant.
    """
    if graph.T < 2:
        raise ValueError("next-snapshot link prediction needs at least two snapshots")
    history = graph.head(graph.T - 1)
    if noise:
        history = perturb_edges(history, noise, seed)
    reps = fit_variants(config.replace(seed=seed), history, variants)
    reports = evaluate_variants(reps, target=graph[graph.T - 1], seed=seed)
    return {r.variant: r.metrics["auc"] for r in reports}


SWEEP_KINDS = ("noise", "data-fraction", "classifier-width")
SWEEP_COLUMNS = ("kind", "point", "variant", "seed", "task", "auc", "ap", "micro_f1", "macro_f1")


def sweep(kind: str, grid, graph: DynamicGraph, config: TrainConfig, stream, *, seeds=(0,),
          variants=("combine", "baseline"), labels: LabelTable | None = None) -> int:
    """Retrain/evaluate per grid point and write one CSV row per (point, variant, seed, task).

    ``noise`` points are edge-perturbation percentages applied to the
    training snapshots; ``data-fraction`` points are the kept fraction of
    the downstream training split; ``classifier-width`` points are MLP
    hidden widths (0 means the linear probe). Link prediction on the last
    snapshot always runs; node classification runs when ``labels`` is given.
    Returns the number of data rows written.
    """
    if kind not in SWEEP_KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    writer = csv.DictWriter(stream, fieldnames=SWEEP_COLUMNS, restval="", lineterminator="\n")
    writer.writeheader()
    grid = list(grid)
    if not grid:
        return 0
    history = graph.head(graph.T - 1)
    target = graph[graph.T - 1]
    rows = 0
    for seed in seeds:
        cfg = config.replace(seed=int(seed))
        base = None if kind == "noise" else fit_variants(cfg, history, variants)
        for point in grid:
            kw = {}
            if kind == "noise":
                reps = fit_variants(cfg, perturb_edges(history, float(point), seed) if point else history, variants)
            else:
                reps = base
                if kind == "data-fraction":
                    kw["train_fraction"] = float(point)
                else:
                    kw["hidden_width"] = int(point) or None
            for rep in evaluate_variants(reps, target=target, labels=labels, seed=int(seed), **kw):
                writer.writerow({"kind": kind, "point": point, "variant": rep.variant, "seed": seed,
                                 "task": rep.task, **rep.metrics})
                rows += 1
    return rows
