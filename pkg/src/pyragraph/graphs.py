"""Pyramidal graph construction.

A slide is represented by three index-aligned m x d embedding blocks, one per
magnification level (M1=5x, M2=10x, M3=20x). The graph built from them has a
clique inside every magnification block and a two-hop chain M1_i - M2_i - M3_i
linking the i-th triplet across levels. The topology is fully determined by m
(plus config flags), so message passing never materializes an edge list; the
explicit edge list and a dense normalized-adjacency operator are exposed as an
independent reference route for tests and tooling.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import ContractError, ValidationError

LEVEL_NAMES = {1: "5x", 2: "10x", 3: "20x"}
ALL_LEVELS = (1, 2, 3)

# Cross-level links per triplet mode. "chain" is the default topology; the
# "triangle" variant additionally ties M1_i to M3_i directly.
_LINKS = {
    "chain": ((1, 2), (2, 3)),
    "triangle": ((1, 2), (2, 3), (1, 3)),
}


@dataclass(frozen=True)
class EmbeddingPyramid:
    """One slide's three m x d embedding blocks plus label and patient group."""

    slide_id: str
    feats_m1: np.ndarray
    feats_m2: np.ndarray
    feats_m3: np.ndarray
    label: int
    group_id: str

    def __post_init__(self):
        blocks = (self.feats_m1, self.feats_m2, self.feats_m3)
        shapes = {b.shape for b in blocks}
        if len(shapes) != 1:
            raise ValidationError(
                f"pyramid {self.slide_id!r}: block shapes differ: "
                f"{[b.shape for b in blocks]}"
            )
        shape = blocks[0].shape
        if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
            raise ValidationError(
                f"pyramid {self.slide_id!r}: blocks must be m x d with m,d >= 1, got {shape}"
            )
        for name, b in zip(("M1", "M2", "M3"), blocks):
            if not np.all(np.isfinite(b)):
                raise ValidationError(
                    f"pyramid {self.slide_id!r}: non-finite value in {name} block"
                )
        if self.label < 0:
            raise ValidationError(f"pyramid {self.slide_id!r}: negative label")

    @property
    def m(self) -> int:
        return self.feats_m1.shape[0]

    @property
    def d(self) -> int:
        return self.feats_m1.shape[1]


@dataclass(frozen=True)
class Topology:
    """Implicit structure of a pyramidal graph: everything except node features.

    levels lists the magnification blocks present, in ascending order; the full
    graph keeps (1, 2, 3) and ablation masks keep a subset. norm selects the
    edge coefficient: "exact" uses 1/sqrt(deg_i * deg_j), "uniform" uses 1/m
    for every edge.
    """

    m: int
    levels: tuple[int, ...] = ALL_LEVELS
    triplet: str = "chain"
    self_loops: bool = False
    norm: str = "exact"

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if self.triplet not in _LINKS:
            raise ValidationError(f"unknown triplet mode {self.triplet!r}")
        if self.norm not in ("exact", "uniform"):
            raise ValidationError(f"unknown norm mode {self.norm!r}")
        if not self.levels or any(l not in ALL_LEVELS for l in self.levels):
            raise ValidationError(f"levels must be a nonempty subset of {ALL_LEVELS}")
        if tuple(sorted(set(self.levels))) != self.levels:
            raise ValidationError("levels must be sorted and unique")

    @property
    def n_nodes(self) -> int:
        return len(self.levels) * self.m

    @cached_property
    def links(self) -> tuple[tuple[int, int], ...]:
        """Cross-level links whose endpoints are both present."""
        kept = set(self.levels)
        return tuple((a, b) for a, b in _LINKS[self.triplet] if a in kept and b in kept)

    def linked_levels(self, level: int) -> tuple[int, ...]:
        return tuple(b if a == level else a for a, b in self.links if level in (a, b))

    def level_degree(self, level: int) -> int:
        """Degree shared by every node of a magnification block."""
        if level not in self.levels:
            raise ContractError(f"level {level} not present in {self.levels}")
        return (self.m - 1) + len(self.linked_levels(level)) + (1 if self.self_loops else 0)

    def degrees(self) -> np.ndarray:
        """Length n_nodes degree vector in node-index order."""
        return np.repeat([self.level_degree(l) for l in self.levels], self.m)

    @property
    def n_edges(self) -> int:
        k = len(self.levels)
        loops = self.n_nodes if self.self_loops else 0
        return k * self.m * (self.m - 1) // 2 + len(self.links) * self.m + loops

    # -- node indexing ------------------------------------------------------

    def block_slice(self, level: int) -> slice:
        pos = self.levels.index(level)
        return slice(pos * self.m, (pos + 1) * self.m)

    def node_level(self, i: int) -> int:
        if not 0 <= i < self.n_nodes:
            raise ContractError(f"node {i} out of range [0, {self.n_nodes})")
        return self.levels[i // self.m]

    def node_index(self, level: int, triplet_index: int) -> int:
        return self.levels.index(level) * self.m + triplet_index

    # -- explicit form (reference route) -------------------------------------

    def edges(self) -> list[tuple[int, int]]:
        """Sorted, deduplicated (a, b) pairs with a <= b; a == b only for self-loops."""
        out: list[tuple[int, int]] = []
        for level in self.levels:
            s = self.block_slice(level)
            out.extend(itertools.combinations(range(s.start, s.stop), 2))
        for a, b in self.links:
            off_a, off_b = self.block_slice(a).start, self.block_slice(b).start
            out.extend((off_a + i, off_b + i) for i in range(self.m))
        if self.self_loops:
            out.extend((i, i) for i in range(self.n_nodes))
        return sorted(tuple(sorted(e)) for e in out)

    def is_adjacent(self, i: int, j: int) -> bool:
        li, lj = self.node_level(i), self.node_level(j)
        if i == j:
            return self.self_loops
        if li == lj:
            return True  # clique edge
        same_triplet = i % self.m == j % self.m
        return same_triplet and tuple(sorted((li, lj))) in self.links

    def norm_coefficient(self, i: int, j: int) -> float:
        """Edge multiplier 1/c_ji applied to h_j when aggregating into node i."""
        if not self.is_adjacent(i, j):
            raise ContractError(f"nodes {i} and {j} are not adjacent")
        if self.norm == "uniform":
            return 1.0 / self.m
        return 1.0 / np.sqrt(
            self.level_degree(self.node_level(i)) * self.level_degree(self.node_level(j))
        )

    def dense_operator(self) -> np.ndarray:
        """Dense normalized adjacency, built from the explicit edge list.

        Degrees are counted from edge incidences rather than taken from the
        closed-form table, so this stays an independent reference for the
        structured kernel. Zero-degree nodes (isolated blocks under masking
        with m = 1) get all-zero rows.
        """
        n = self.n_nodes
        adj = np.zeros((n, n))
        for a, b in self.edges():
            adj[a, b] = 1.0
            adj[b, a] = 1.0
        if self.norm == "uniform":
            return adj / self.m
        deg = adj.sum(axis=1)
        inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros(n), where=deg > 0)
        return inv_sqrt[:, None] * adj * inv_sqrt[None, :]

    # -- structured kernel ----------------------------------------------------

    def aggregate(self, feats: np.ndarray) -> np.ndarray:
        """Normalized neighbor sum for all nodes, O(m * d) per magnification.

        Equivalent to dense_operator() @ feats: each clique contribution is the
        block column-sum minus the node's own row, and each cross-level link
        contributes the partner block row-for-row.
        """
        if feats.shape[0] != self.n_nodes:
            raise ValidationError(
                f"feats has {feats.shape[0]} rows, topology expects {self.n_nodes}"
            )
        blocks = {l: feats[self.block_slice(l)] for l in self.levels}
        sums = {l: blocks[l].sum(axis=0) for l in self.levels}
        out = np.empty_like(feats)
        for level in self.levels:
            x = blocks[level]
            deg = self.level_degree(level)
            if deg == 0:
                out[self.block_slice(level)] = 0.0
                continue
            if self.norm == "uniform":
                acc = (sums[level] - x) / self.m
                if self.self_loops:
                    acc += x / self.m
                for other in self.linked_levels(level):
                    acc += blocks[other] / self.m
            else:
                acc = (sums[level] - x) / deg  # 1/sqrt(deg*deg) within a clique
                if self.self_loops:
                    acc += x / deg
                for other in self.linked_levels(level):
                    acc += blocks[other] / np.sqrt(deg * self.level_degree(other))
            out[self.block_slice(level)] = acc
        return out


@dataclass(frozen=True)
class PyramidGraph:
    """Node features plus implicit topology for one slide.

    Node order follows topology.levels block by block; within the full graph
    node i in [0, m) is M1 triplet i, node m + i is M2 triplet i, node 2m + i
    is M3 triplet i.
    """

    node_feats: np.ndarray
    topology: Topology
    label: int
    slide_id: str
    group_id: str

    def __post_init__(self):
        if self.node_feats.shape[0] != self.topology.n_nodes:
            raise ValidationError(
                f"graph {self.slide_id!r}: {self.node_feats.shape[0]} feature rows "
                f"for {self.topology.n_nodes} nodes"
            )
        if not np.all(np.isfinite(self.node_feats)):
            raise ValidationError(f"graph {self.slide_id!r}: non-finite node feature")

    @property
    def m(self) -> int:
        return self.topology.m

    @property
    def d(self) -> int:
        return self.node_feats.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.topology.n_nodes

    def level_feats(self, level: int) -> np.ndarray:
        return self.node_feats[self.topology.block_slice(level)]

    def with_label(self, label: int) -> "PyramidGraph":
        return replace(self, label=label)


def build_graph(
    pyr: EmbeddingPyramid,
    triplet: str = "chain",
    self_loops: bool = False,
    norm: str = "exact",
) -> PyramidGraph:
    """Assemble the pyramidal graph for one slide.

    Pure: the same pyramid and flags always produce a bit-identical graph.
    Features are stacked in M1, M2, M3 block order and upcast to float64.
    """
    top = Topology(m=pyr.m, triplet=triplet, self_loops=self_loops, norm=norm)
    feats = np.concatenate(
        [
            np.asarray(pyr.feats_m1, dtype=np.float64),
            np.asarray(pyr.feats_m2, dtype=np.float64),
            np.asarray(pyr.feats_m3, dtype=np.float64),
        ],
        axis=0,
    )
    return PyramidGraph(
        node_feats=feats,
        topology=top,
        label=pyr.label,
        slide_id=pyr.slide_id,
        group_id=pyr.group_id,
    )


def explicit_edges(g: PyramidGraph) -> list[tuple[int, int]]:
    """Sorted undirected edge list of the graph (reference route)."""
    return g.topology.edges()
