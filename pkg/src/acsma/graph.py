"""Conflict graphs and independent-set enumeration.

Links are indexed ``0 .. link_count - 1``. Subsets of links are stored as
integer bitmasks, bit ``l`` set when link ``l`` is in the subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_LINKS = 30


class GraphTooLarge(ValueError):
    """Raised when a graph exceeds the bitmask enumeration bound."""


@dataclass(frozen=True)
class ConflictGraph:
    """Links plus a symmetric pairwise conflict relation.

    Parameters
    ----------
    link_count : int
        Number of wireless links.
    conflicts : iterable of (int, int)
        Unordered pairs of links that carrier-sense each other.
    names : sequence of str, optional
        Display names; defaults to ``"1" .. "n"``.
    """

    link_count: int
    conflicts: frozenset = field(default_factory=frozenset)
    names: tuple = ()

    def __init__(self, link_count: int, conflicts: Iterable = (), names: Sequence[str] | None = None):
        link_count = int(link_count)
        if link_count < 1:
            raise ValueError("link_count must be a positive integer")
        if link_count > MAX_LINKS:
            raise GraphTooLarge(f"link_count={link_count} exceeds the limit of {MAX_LINKS}")
        pairs = set()
        for u, v in conflicts:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-conflict on link {u}")
            if not (0 <= u < link_count and 0 <= v < link_count):
                raise ValueError(f"conflict ({u}, {v}) references a missing link")
            pairs.add((min(u, v), max(u, v)))
        if names is None or len(names) == 0:
            names = tuple(str(i + 1) for i in range(link_count))
        names = tuple(str(n) for n in names)
        if len(names) != link_count:
            raise ValueError("names must have one entry per link")
        if len(set(names)) != link_count:
            raise ValueError("link names must be unique")
        object.__setattr__(self, "link_count", link_count)
        object.__setattr__(self, "conflicts", frozenset(pairs))
        object.__setattr__(self, "names", names)

    @classmethod
    def complete(cls, link_count: int) -> "ConflictGraph":
        pairs = [(u, v) for u in range(link_count) for v in range(u + 1, link_count)]
        return cls(link_count, pairs)

    def neighbor_masks(self) -> np.ndarray:
        """Bitmask of conflicting links for every link."""
        masks = np.zeros(self.link_count, dtype=np.int64)
        for u, v in self.conflicts:
            masks[u] |= 1 << v
            masks[v] |= 1 << u
        return masks

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.link_count, self.link_count), dtype=bool)
        for u, v in self.conflicts:
            adj[u, v] = adj[v, u] = True
        return adj

    def is_independent(self, mask: int) -> bool:
        return not any((mask >> u) & 1 and (mask >> v) & 1 for u, v in self.conflicts)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown link {name!r}") from None


@dataclass(frozen=True)
class IndependentSetFamily:
    """Every independent set of a conflict graph, in ascending bitmask order.

    ``masks[0]`` is always the empty schedule. ``membership`` is the
    ``(n_sets, n_links)`` 0/1 incidence matrix used throughout the numerical
    code.
    """

    graph: ConflictGraph
    masks: np.ndarray
    membership: np.ndarray

    def __len__(self) -> int:
        return len(self.masks)

    @property
    def link_count(self) -> int:
        return self.graph.link_count

    @property
    def sizes(self) -> np.ndarray:
        return self.membership.sum(axis=1)

    def as_sets(self) -> list[frozenset]:
        """Members as frozensets of link indices."""
        return [frozenset(int(l) for l in np.flatnonzero(row)) for row in self.membership]

    def index(self, mask: int) -> int:
        i = int(np.searchsorted(self.masks, mask))
        if i == len(self.masks) or self.masks[i] != mask:
            raise KeyError(f"{mask:#b} is not an independent set")
        return i


def enumerate_independent_sets(graph: ConflictGraph) -> IndependentSetFamily:
    """Enumerate all independent sets by incremental bitmask extension.

    Link ``l`` is appended to every set built so far that contains no
    neighbour of ``l``; sets produced this way are unique, and the result is
    sorted by bitmask value.

    Raises
    ------
    GraphTooLarge
        If the graph has more than ``MAX_LINKS`` links.
    """
    if graph.link_count > MAX_LINKS:
        raise GraphTooLarge(f"link_count={graph.link_count} exceeds the limit of {MAX_LINKS}")
    nbr = graph.neighbor_masks()
    sets = [0]
    for link in range(graph.link_count):
        bit = 1 << link
        blocked = int(nbr[link])
        sets.extend([s | bit for s in sets if not s & blocked])
    masks = np.array(sorted(sets), dtype=np.int64)
    links = np.arange(graph.link_count, dtype=np.int64)
    membership = ((masks[:, None] >> links[None, :]) & 1).astype(float)
    return IndependentSetFamily(graph=graph, masks=masks, membership=membership)
