"""Discrete-time dynamic graphs: containers, file I/O, synthetic generation
and edge-noise injection.

Snapshots live in a shared global node index space. Edges are undirected and
unweighted; nodes that are absent from a snapshot simply have zero degree.
"""
from __future__ import annotations

import gzip
import json
import os
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

__all__ = [
    "EdgeListError",
    "SnapshotRangeError",
    "ConfigError",
    "Snapshot",
    "DynamicGraph",
    "LabelTable",
    "PlantedConfig",
    "load_edge_list",
    "read_edge_list",
    "write_edge_list",
    "load_labels",
    "write_labels",
    "load_planted_config",
    "normalize_adjacency",
    "generate_planted",
    "perturb_edges",
]


class EdgeListError(ValueError):
    """Malformed line in an edge-list or label file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SnapshotRangeError(EdgeListError):
    """Snapshot index outside ``1..T``."""


class ConfigError(ValueError):
    pass


def _canonical_edges(pairs, node_count: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= node_count):
        raise ValueError(f"edge endpoint outside [0, {node_count})")
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """One undirected graph over ``node_count`` nodes.

    ``edges`` holds each undirected edge once as a sorted ``(u, v)`` row with
    ``u < v``; ``adjacency`` is the symmetric CSR matrix built from it.
    """

    node_count: int
    edges: np.ndarray

    @classmethod
    def from_edges(cls, node_count: int, pairs: Iterable[tuple[int, int]] | np.ndarray) -> "Snapshot":
        pairs = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs)
        return cls(int(node_count), _canonical_edges(pairs, node_count))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.node_count
        if self.num_edges == 0:
            return sp.csr_matrix((n, n), dtype=np.float64)
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def normalized(self) -> sp.csr_matrix:
        return normalize_adjacency(self)

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.adjacency[u, v])

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return self.node_count == other.node_count and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash((self.node_count, self.edges.tobytes()))


@dataclass(frozen=True)
class DynamicGraph:
    """Time-ordered sequence of snapshots sharing one node index space."""

    snapshots: tuple[Snapshot, ...]
    node_count: int

    def __post_init__(self):
        if len(self.snapshots) < 1:
            raise ValueError("a dynamic graph needs at least one snapshot")
        for s in self.snapshots:
            if s.node_count != self.node_count:
                raise ValueError("all snapshots must share the global node index space")

    @classmethod
    def from_edge_lists(cls, node_count: int, edge_lists: Sequence) -> "DynamicGraph":
        return cls(tuple(Snapshot.from_edges(node_count, e) for e in edge_lists), int(node_count))

    @property
    def T(self) -> int:
        return len(self.snapshots)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]

    def __iter__(self):
        return iter(self.snapshots)

    def head(self, T: int) -> "DynamicGraph":
        """First ``T`` snapshots (the usual train part before a held-out step)."""
        if not 1 <= T <= self.T:
            raise ValueError(f"cannot take {T} of {self.T} snapshots")
        return DynamicGraph(self.snapshots[:T], self.node_count)

    @property
    def num_edges(self) -> int:
        return sum(s.num_edges for s in self.snapshots)


@dataclass(frozen=True)
class LabelTable:
    """Class labels for nodes (``static``) or ``(node, t)`` pairs (``per-snapshot``).

    ``times`` is 0-based and ``None`` for static tables.
    """

    kind: str
    nodes: np.ndarray
    labels: np.ndarray
    class_count: int
    times: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("static", "per-snapshot"):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if (self.kind == "per-snapshot") != (self.times is not None):
            raise ValueError("per-snapshot labels need times; static labels must not have them")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("class index outside [0, class_count)")

    def __len__(self) -> int:
        return len(self.labels)

    def validate(self, node_count: int, T: int | None = None) -> None:
        if len(self.nodes) and (self.nodes.min() < 0 or self.nodes.max() >= node_count):
            raise ValueError("labeled node index outside the graph")
        if self.times is not None and T is not None and len(self.times):
            if self.times.min() < 0 or self.times.max() >= T:
                raise ValueError("label timestamp outside the graph")


@dataclass(frozen=True)
class PlantedConfig:
    """Parameters of the planted two-factor dynamic graph model."""

    node_count: int = 200
    T: int = 12
    static_classes: int = 4
    dynamic_states: int = 3
    state_transition_prob: float = 0.3
    edge_base_rate: float = 0.005
    static_affinity: float = 0.05
    dynamic_affinity: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.static_classes < 2 or self.dynamic_states < 2:
            raise ConfigError("static_classes and dynamic_states must be >= 2")
        if self.node_count < 1 or self.T < 1:
            raise ConfigError("node_count and T must be positive")
        for name in ("state_transition_prob", "edge_base_rate", "static_affinity", "dynamic_affinity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        total = self.edge_base_rate + self.static_affinity + self.dynamic_affinity
        if total > 1.0 + 1e-12:
            raise ConfigError(f"edge probability can reach {total:.4f} > 1")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _data_lines(stream: TextIO):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split()


def load_edge_list(source: TextIO, T: int) -> DynamicGraph:
    """Parse whitespace-separated ``src dst t`` lines (``t`` is 1-based).

    Directed input is symmetrized and duplicate records collapse. Self-loops
    are dropped.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    per_t: list[list[tuple[int, int]]] = [[] for _ in range(T)]
    max_node = -1
    for lineno, parts in _data_lines(source):
        if len(parts) != 3:
            raise EdgeListError(lineno, f"expected 'src dst t', got {len(parts)} fields")
        try:
            u, v, t = (int(x) for x in parts)
        except ValueError:
            raise EdgeListError(lineno, "non-integer field") from None
        if u < 0 or v < 0:
            raise EdgeListError(lineno, "negative node index")
        if not 1 <= t <= T:
            raise SnapshotRangeError(lineno, f"snapshot {t} outside 1..{T}")
        per_t[t - 1].append((u, v))
        max_node = max(max_node, u, v)
    n = max_node + 1
    return DynamicGraph.from_edge_lists(n, [np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in per_t])


def read_edge_list(path: str | os.PathLike, T: int) -> DynamicGraph:
    opener = _open_maybe_gzip(path)
    with opener as fh:
        return load_edge_list(fh, T)


def _open_maybe_gzip(path):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def write_edge_list(graph: DynamicGraph, stream: TextIO) -> None:
    for t, snap in enumerate(graph.snapshots, start=1):
        for u, v in snap.edges:
            stream.write(f"{u} {v} {t}\n")


def load_labels(source: TextIO, kind: str = "static", class_count: int | None = None) -> LabelTable:
    """Read ``node label`` (static) or ``node t label`` (per-snapshot, 1-based ``t``)."""
    width = 2 if kind == "static" else 3
    rows = []
    for lineno, parts in _data_lines(source):
        if len(parts) != width:
            raise EdgeListError(lineno, f"expected {width} fields for {kind} labels")
        try:
            rows.append([int(x) for x in parts])
        except ValueError:
            raise EdgeListError(lineno, "non-integer field") from None
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, width)
    labels = arr[:, -1]
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 0
    times = arr[:, 1] - 1 if kind == "per-snapshot" else None
    return LabelTable(kind, arr[:, 0], labels, class_count, times)


def write_labels(table: LabelTable, stream: TextIO) -> None:
    if table.kind == "static":
        for v, y in zip(table.nodes, table.labels):
            stream.write(f"{v} {y}\n")
    else:
        for v, t, y in zip(table.nodes, table.times, table.labels):
            stream.write(f"{v} {t + 1} {y}\n")


def _load_mapping(path) -> dict:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        return json.loads(raw)
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


def load_planted_config(path, **overrides) -> PlantedConfig:
    """Build a :class:`PlantedConfig` from a TOML or JSON file of field names."""
    mapping = dict(_load_mapping(path))
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(PlantedConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown planted config keys: {sorted(unknown)}")
    return PlantedConfig(**mapping)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def normalize_adjacency(s: Snapshot) -> sp.csr_matrix:
    """Symmetric GCN normalization ``D^-1/2 (A + I) D^-1/2`` as CSR."""
    a_hat = s.adjacency + sp.identity(s.node_count, dtype=np.float64, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return (inv_sqrt @ a_hat @ inv_sqrt).tocsr()


def _upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def generate_planted(cfg: PlantedConfig) -> tuple[DynamicGraph, LabelTable, LabelTable]:
    """Sample a dynamic graph driven by a static class and a drifting state.

    Each node draws a class ``c_v`` uniformly from ``static_classes`` and a
    state chain ``z_v^t`` over ``dynamic_states``; at every step the state
    jumps to a uniformly chosen *different* state with probability
    ``state_transition_prob``. Edge ``(u, v)`` exists at ``t`` independently
    with probability ``base + static_affinity*[c_u == c_v] +
    dynamic_affinity*[z_u^t == z_v^t]``.

    Returns
    -------
    graph, static_labels, state_labels
    """
    rng = np.random.default_rng(cfg.seed)
    n, T, M = cfg.node_count, cfg.T, cfg.dynamic_states
    classes = rng.integers(0, cfg.static_classes, size=n)
    states = np.empty((T, n), dtype=np.int64)
    states[0] = rng.integers(0, M, size=n)
    for t in range(1, T):
        jump = rng.random(n) < cfg.state_transition_prob
        shift = rng.integers(1, M, size=n)
        states[t] = np.where(jump, (states[t - 1] + shift) % M, states[t - 1])

    iu, ju = _upper_pairs(n)
    same_class = classes[iu] == classes[ju]
    edge_lists = []
    for t in range(T):
        prob = (cfg.edge_base_rate
                + cfg.static_affinity * same_class
                + cfg.dynamic_affinity * (states[t, iu] == states[t, ju]))
        keep = rng.random(len(iu)) < prob
        edge_lists.append(np.stack([iu[keep], ju[keep]], axis=1))

    graph = DynamicGraph.from_edge_lists(n, edge_lists)
    static = LabelTable("static", np.arange(n), classes, cfg.static_classes)
    tt, vv = np.meshgrid(np.arange(T), np.arange(n), indexing="ij")
    dynamic = LabelTable("per-snapshot", vv.ravel(), states.ravel(), M, tt.ravel())
    return graph, static, dynamic


def perturb_edges(g: DynamicGraph, r: float, seed=None) -> DynamicGraph:
    """Replace ``floor(r/2 % * |E_t|)`` edges of every snapshot with random non-edges.

    Half the noise budget deletes uniformly chosen existing edges, the other
    half adds the same number of uniformly chosen absent edges, so every
    snapshot keeps its edge count.
    """
    if not 0 <= r <= 100:
        raise ValueError(f"noise rate {r} outside [0, 100]")
    rng = np.random.default_rng(seed)
    n = g.node_count
    max_pairs = n * (n - 1) // 2
    out = []
    for snap in g.snapshots:
        m = snap.num_edges
        k = min(int(np.floor(r / 200.0 * m)), m)
        if k == 0:
            out.append(snap)
            continue
        keep = np.ones(m, dtype=bool)
        keep[rng.choice(m, size=k, replace=False)] = False
        existing = set(map(tuple, snap.edges.tolist()))
        k = min(k, max_pairs - m)
        added: set[tuple[int, int]] = set()
        while len(added) < k:
            u, v = rng.integers(0, n, size=2)
            if u == v:
                continue
            e = (int(min(u, v)), int(max(u, v)))
            if e in existing or e in added:
                continue
            added.add(e)
        new_edges = np.concatenate([snap.edges[keep], np.asarray(sorted(added), dtype=np.int64).reshape(-1, 2)])
        out.append(Snapshot.from_edges(n, new_edges))
    return DynamicGraph(tuple(out), n)
