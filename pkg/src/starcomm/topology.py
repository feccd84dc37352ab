"""Range-limited communication graphs with a per-robot degree cap."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DegreeBoundViolation(AssertionError):
    pass


@dataclass
class CommGraph:
    n_robots: int
    edges: frozenset = field(default_factory=frozenset)  # frozenset of (i, j) with i < j
    time_index: int = 0

    def __post_init__(self):
        edges = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on robot {i}")
            edges.add((min(i, j), max(i, j)))
        self.edges = frozenset(edges)

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_robots, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_robots)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        for lst in nbrs:
            lst.sort()
        return nbrs

    def edge_lines(self) -> list[str]:
        """Edge list as ``"t i j"`` text lines."""
        return [f"{self.time_index} {i} {j}" for i, j in sorted(self.edges)]


@dataclass(frozen=True)
class StarNeighborhood:
    center: int
    leaves: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.leaves)


def _pairwise_distances(positions) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def candidate_links(positions, comm_range: float, alive=None) -> set[tuple[int, int]]:
    """All pairs ``(i, j)``, ``i < j``, at Euclidean distance ``<= comm_range``."""
    if comm_range <= 0:
        raise ValueError("communication range must be positive")
    d = _pairwise_distances(positions)
    ii, jj = np.nonzero(np.triu(d <= comm_range, k=1))
    pairs = zip(ii.tolist(), jj.tolist())
    if alive is not None:
        alive = np.asarray(alive, dtype=bool)
        return {(i, j) for i, j in pairs if alive[i] and alive[j]}
    return set(pairs)


def enforce_degree(candidates: Iterable[tuple[int, int]], positions, delta: int,
                   time_index: int = 0) -> CommGraph:
    """Greedy nearest-first admission under a mutual degree budget.

    Candidates are visited by ascending length, ties by ``(i, j)``; an edge is kept
    only if both endpoints still have fewer than ``delta`` links.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    cands = sorted({(min(i, j), max(i, j)) for i, j in candidates})
    if not cands:
        return CommGraph(n, frozenset(), time_index)
    arr = np.array(cands)
    diff = pos[arr[:, 0]] - pos[arr[:, 1]]
    length = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((arr[:, 1], arr[:, 0], length))
    budget = [delta] * n
    kept = []
    for e in order.tolist():
        i, j = cands[e]
        if budget[i] > 0 and budget[j] > 0:
            budget[i] -= 1
            budget[j] -= 1
            kept.append((i, j))
    return CommGraph(n, frozenset(kept), time_index)


def build_graph(positions, comm_range: float, delta: int, alive=None, time_index: int = 0) -> CommGraph:
    return enforce_degree(candidate_links(positions, comm_range, alive), positions, delta, time_index)


def neighborhood(g: CommGraph, i: int) -> StarNeighborhood:
    if not 0 <= i < g.n_robots:
        raise IndexError(f"unknown robot id {i} (graph has {g.n_robots} robots)")
    leaves = sorted(j if a == i else a for a, j in g.edges if i in (a, j))
    return StarNeighborhood(i, tuple(leaves))


def max_degree(g: CommGraph) -> int:
    return int(g.degrees().max()) if g.n_robots and g.edges else 0


def check_degree(g: CommGraph, delta: int) -> None:
    deg = g.degrees()
    bad = np.nonzero(deg > delta)[0]
    if len(bad):
        raise DegreeBoundViolation(
            f"step {g.time_index}: robots {bad.tolist()} exceed degree bound {delta} (degrees {deg[bad].tolist()})")


def count_possible_graphs(n: int) -> int:
    """Simple undirected graphs on ``n`` labeled vertices: ``2 ** C(n, 2)``."""
    if n < 1:
        raise ValueError("need at least one robot")
    return 2 ** (n * (n - 1) // 2)


def export_edges(graphs: Sequence[CommGraph]) -> str:
    return "".join(line + "\n" for g in graphs for line in g.edge_lines())
