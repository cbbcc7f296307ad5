"""Information-exchange graph, Laplacian, gain sparsity pattern and output matrix.

Areas are numbered from 1 in the public API (edge lists, config files);
matrices are plain zero-based numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATES_PER_AREA = 4
# zero-based slots inside one area block: [df, dPG, dPtie, int_z]
FREQ, GEN, TIE, ACE_INT = range(STATES_PER_AREA)


@dataclass(frozen=True)
class InterconnectionGraph:
    """Undirected, unweighted, connected graph over ``n_areas`` areas.

    ``edges`` holds 1-based unordered pairs; they are normalized to
    ``(min, max)`` and sorted on construction.
    """

    n_areas: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if int(self.n_areas) != self.n_areas or self.n_areas < 1:
            raise ValueError(f"n_areas must be a positive integer, got {self.n_areas!r}")
        normalized = []
        for edge in self.edges:
            a, b = (int(v) for v in edge)
            if a == b:
                raise ValueError(f"self-loop edge ({a}, {b})")
            for v in (a, b):
                if not 1 <= v <= self.n_areas:
                    raise ValueError(f"edge ({a}, {b}) references area {v} outside [1, {self.n_areas}]")
            normalized.append((min(a, b), max(a, b)))
        if len(set(normalized)) != len(normalized):
            raise ValueError("duplicate edges in graph")
        object.__setattr__(self, "edges", tuple(sorted(normalized)))
        if _count_components(self.n_areas, self.edges) != 1:
            raise ValueError("information-exchange graph must be connected")

    @classmethod
    def chain(cls, n_areas: int) -> InterconnectionGraph:
        return cls(n_areas, tuple((i, i + 1) for i in range(1, n_areas)))

    def neighbors(self, area: int) -> list[int]:
        """1-based neighbors of a 1-based area, ascending."""
        out = [b for a, b in self.edges if a == area] + [a for a, b in self.edges if b == area]
        return sorted(out)

    def degree(self, area: int) -> int:
        return len(self.neighbors(area))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_areas, self.n_areas))
        for a, b in self.edges:
            adj[a - 1, b - 1] = adj[b - 1, a - 1] = 1.0
        return adj


def _count_components(n: int, edges) -> int:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        ra, rb = find(a - 1), find(b - 1)
        if ra != rb:
            parent[ra] = rb
    return len({find(i) for i in range(n)})


@dataclass(frozen=True)
class StructurePattern:
    """Boolean sparsity mask for a static output-feedback gain."""

    mask: np.ndarray
    n_nonzero: int = field(init=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be a 2-D boolean matrix")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "n_nonzero", int(mask.sum()))
        if self.n_nonzero < 1:
            raise ValueError("pattern must allow at least one nonzero entry")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def __eq__(self, other):
        if not isinstance(other, StructurePattern):
            return NotImplemented
        return self.mask.shape == other.mask.shape and bool(np.all(self.mask == other.mask))

    def __hash__(self):
        return hash((self.mask.shape, self.mask.tobytes()))


def build_laplacian(graph: InterconnectionGraph) -> np.ndarray:
    adj = graph.adjacency()
    return np.diag(adj.sum(axis=1)) - adj


def build_structure_pattern(graph: InterconnectionGraph) -> StructurePattern:
    """Area ``a`` may use the output of area ``b`` iff ``a == b`` or they share an edge."""
    mask = graph.adjacency().astype(bool) | np.eye(graph.n_areas, dtype=bool)
    return StructurePattern(mask)


def build_output_matrix(graph: InterconnectionGraph, include_frequency: bool = False) -> np.ndarray:
    """Output matrix C of shape (N, 4N).

    Row ``i`` sums the generation and tie-line slots of area ``i`` and each
    neighbor; with ``include_frequency`` the frequency slot is added too.
    """
    n = graph.n_areas
    slots = (FREQ, GEN, TIE) if include_frequency else (GEN, TIE)
    C = np.zeros((n, STATES_PER_AREA * n))
    for i in range(1, n + 1):
        for j in [i, *graph.neighbors(i)]:
            for s in slots:
                C[i - 1, STATES_PER_AREA * (j - 1) + s] = 1.0
    return C


def project_onto_pattern(matrix, pattern: StructurePattern) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != pattern.shape:
        raise ValueError(f"matrix shape {matrix.shape} does not match pattern shape {pattern.shape}")
    return np.where(pattern.mask, matrix, 0.0)
