"""Bundled public data."""
from __future__ import annotations

import gzip
from importlib import resources

from ..graph import DynamicGraph, load_edge_list

__all__ = ["UCI_SNAPSHOTS", "load_uci"]

UCI_SNAPSHOTS = 13


def load_uci() -> DynamicGraph:
    """UCI student-community messages as 13 snapshots of equal record count.

    Directed messages are symmetrized and repeated pairs within a snapshot
    collapse to one edge.
    """
    ref = resources.files(__package__).joinpath("uci_messages.txt.gz")
    with ref.open("rb") as raw, gzip.open(raw, "rt", encoding="utf-8") as fh:
        return load_edge_list(fh, UCI_SNAPSHOTS)
