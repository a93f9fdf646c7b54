"""Ground-truth radius assignments: exact search, MST approximation, local search.

All solvers compare assignments through one deterministic area evaluator
(grid method, fixed resolution and seed by default), so their outputs are
reproducible and directly comparable.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SearchBudgetError
from .geometry import (
    AreaEstimate,
    AreaMethod,
    Topology,
    components,
    induced_adjacency,
    is_connected,
    pairwise_distances,
    union_area_arrays,
)

BRUTE_FORCE_MAX_NODES = 7


class RadiusSource(str, enum.Enum):
    BRUTE_FORCE = "brute_force"
    MST = "mst"
    LOCAL_SEARCH = "local_search"
    MODEL_PREDICTION = "model_prediction"
    REPAIRED = "repaired"


@dataclass(frozen=True)
class RadiusAssignment:
    radii: tuple[float, ...]
    source: RadiusSource

    def __post_init__(self):
        r = tuple(float(v) for v in self.radii)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "source", RadiusSource(self.source))
        if self.source is not RadiusSource.MODEL_PREDICTION:
            if any(not np.isfinite(v) or v < 0 for v in r):
                raise InvalidInputError("radii must be finite and nonnegative")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.radii, dtype=np.float64)

    def __len__(self):
        return len(self.radii)


@dataclass(frozen=True)
class SpanningTree:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple(sorted((min(i, j), max(i, j)) for i, j in self.edges))
        object.__setattr__(self, "edges", edges)
        if len(edges) != self.n - 1:
            raise InvalidInputError(f"a tree on {self.n} nodes has {self.n - 1} edges, got {len(edges)}")
        for i, j in edges:
            if not (0 <= i < self.n and 0 <= j < self.n) or i == j:
                raise InvalidInputError(f"edge ({i}, {j}) out of range for {self.n} nodes")
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in edges:
            adj[i, j] = adj[j, i] = True
        if not is_connected(adj):
            raise InvalidInputError("edges do not form a spanning tree")


@dataclass(frozen=True)
class AreaConfig:
    """How solvers and evaluators measure union area."""

    method: AreaMethod = AreaMethod.GRID
    samples: int = 1 << 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", AreaMethod(self.method))


DEFAULT_AREA = AreaConfig()


def assignment_area(topology: Topology, radii, area: AreaConfig = DEFAULT_AREA) -> AreaEstimate:
    r = radii.array if isinstance(radii, RadiusAssignment) else np.asarray(radii, dtype=np.float64)
    return union_area_arrays(topology.positions, r, area.method, area.seed, area.samples)


def _check_topology(topology: Topology) -> Topology:
    if not isinstance(topology, Topology):
        topology = Topology(topology)
    if topology.n < 2:
        raise InvalidInputError("labeling needs at least 2 nodes")
    return topology


def _sort_key(w: float) -> float:
    # collapse last-ulp noise so geometrically equal edges hit the index tie-break
    return float(f"{w:.12g}")


def mst(topology: Topology) -> SpanningTree:
    """Kruskal on the complete Euclidean graph, ties broken by lowest (i, j)."""
    topology = _check_topology(topology)
    n = topology.n
    d = pairwise_distances(topology)
    edges = sorted(
        ((i, j) for i in range(n) for j in range(i + 1, n)),
        key=lambda e: (_sort_key(d[e]), e),
    )
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
            chosen.append((i, j))
            if len(chosen) == n - 1:
                break
    return SpanningTree(n, tuple(chosen))


def radii_from_tree(topology: Topology, tree: SpanningTree) -> RadiusAssignment:
    topology = _check_topology(topology)
    if tree.n != topology.n:
        raise InvalidInputError(f"tree spans {tree.n} nodes, topology has {topology.n}")
    d = pairwise_distances(topology)
    r = np.zeros(topology.n)
    for i, j in tree.edges:
        r[i] = max(r[i], d[i, j])
        r[j] = max(r[j], d[i, j])
    return RadiusAssignment(tuple(r), RadiusSource.MST)


def _connected_batch(dist: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """Connectivity of the induced graph for each row of ``cand`` (M, N)."""
    n = dist.shape[0]
    mins = np.minimum(cand[:, :, None], cand[:, None, :])
    reach = (dist[None] <= mins).astype(np.float32)
    reach[:, np.arange(n), np.arange(n)] = 1.0
    steps = max(1, int(np.ceil(np.log2(max(n - 1, 1)))))
    for _ in range(steps):
        reach = (reach @ reach > 0).astype(np.float32)
    return reach[:, 0, :].all(axis=1)


def _pick_best(scored):
    """scored: iterable of (area_value, radii ndarray). Deterministic argmin."""
    return min(scored, key=lambda s: (s[0], float(np.sum(s[1] ** 2)), tuple(s[1])))


def brute_force_mast(
    topology: Topology,
    area: AreaConfig = DEFAULT_AREA,
) -> RadiusAssignment:
    """Exact minimum-area connected radius assignment for N <= 7.

    Each node's radius is drawn from its distances to the other nodes. Only
    connected assignments that are minimal (lowering any one radius to the
    next candidate disconnects the graph) are scored: any non-minimal
    assignment covers a superset of some minimal one, so it can never win.
    Ties go to the smaller sum of squared radii, then lexicographic radii.
    """
    topology = _check_topology(topology)
    n = topology.n
    if n > BRUTE_FORCE_MAX_NODES:
        raise SearchBudgetError(
            f"brute force is limited to {BRUTE_FORCE_MAX_NODES} nodes (got {n}); use local_search_mast"
        )
    dist = pairwise_distances(topology)
    levels = [np.unique(np.delete(dist[i], i)) for i in range(n)]
    sizes = [len(lv) for lv in levels]
    idx = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=np.int64)
    cand = np.stack([levels[i][idx[:, i]] for i in range(n)], axis=1)
    ok = _connected_batch(dist, cand)

    strides = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        strides[i] = strides[i + 1] * sizes[i + 1]
    minimal = ok.copy()
    for i in range(n):
        lowerable = minimal & (idx[:, i] > 0)
        rows = np.flatnonzero(lowerable)
        minimal[rows[ok[rows - strides[i]]]] = False

    scored = []
    for row in np.flatnonzero(minimal):
        r = cand[row]
        scored.append((assignment_area(topology, r, area).value, r))
    _, best = _pick_best(scored)
    return RadiusAssignment(tuple(best), RadiusSource.BRUTE_FORCE)


def _tree_radii(dist: np.ndarray, edges) -> np.ndarray:
    r = np.zeros(dist.shape[0])
    for i, j in edges:
        r[i] = max(r[i], dist[i, j])
        r[j] = max(r[j], dist[i, j])
    return r


def local_search_mast(
    topology: Topology,
    max_iters: int = 100,
    area: AreaConfig = DEFAULT_AREA,
) -> RadiusAssignment:
    """Edge-swap hill climbing over spanning trees, starting from the MST.

    A swap removes one tree edge and reconnects the two halves with another
    edge; the best strictly improving swap is taken each iteration.
    """
    topology = _check_topology(topology)
    n = topology.n
    dist = pairwise_distances(topology)
    edges = set(mst(topology).edges)
    cache: dict[frozenset, float] = {}

    def score(es) -> float:
        key = frozenset(es)
        if key not in cache:
            cache[key] = assignment_area(topology, _tree_radii(dist, es), area).value
        return cache[key]

    current = score(edges)
    for _ in range(max_iters):
        best = None
        for removed in sorted(edges):
            rest = edges - {removed}
            adj = np.zeros((n, n), dtype=bool)
            for i, j in rest:
                adj[i, j] = adj[j, i] = True
            label = components(adj)
            for i in range(n):
                for j in range(i + 1, n):
                    if label[i] == label[j] or (i, j) == removed:
                        continue
                    trial = rest | {(i, j)}
                    a = score(trial)
                    if a < current:
                        r = _tree_radii(dist, trial)
                        key = (a, float(np.sum(r**2)), tuple(sorted(trial)))
                        if best is None or key < best[0]:
                            best = (key, trial)
        if best is None:
            break
        current = best[0][0]
        edges = best[1]
    return RadiusAssignment(tuple(_tree_radii(dist, edges)), RadiusSource.LOCAL_SEARCH)


def repair_radii(topology: Topology, radii) -> RadiusAssignment:
    """Raise radii along nearest cross-component pairs until the graph is connected.

    Negative entries are clamped to zero first; no radius is ever lowered.
    Already-connected inputs come back unchanged.
    """
    topology = Topology(topology) if not isinstance(topology, Topology) else topology
    r = np.maximum(np.asarray(getattr(radii, "radii", radii), dtype=np.float64), 0.0)
    if r.shape != (topology.n,):
        raise InvalidInputError(f"expected {topology.n} radii, got shape {r.shape}")
    dist = pairwise_distances(topology)
    while True:
        label = components(induced_adjacency(topology, r))
        if label.max() == 0:
            break
        cross = label[:, None] != label[None, :]
        masked = np.where(cross, dist, np.inf)
        i, j = np.unravel_index(np.argmin(masked), masked.shape)
        i, j = min(i, j), max(i, j)
        r[i] = max(r[i], dist[i, j])
        r[j] = max(r[j], dist[i, j])
    return RadiusAssignment(tuple(r), RadiusSource.REPAIRED)


SOLVERS = {
    "brute_force": lambda topo, area: brute_force_mast(topo, area),
    "mst": lambda topo, area: radii_from_tree(topo, mst(topo)),
    "local_search": lambda topo, area: local_search_mast(topo, area=area),
}
