"""Traversable world graph, A* routing and graph/grid file I/O."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


class GraphError(ValueError):
    """Invalid graph construction or malformed graph file."""


class NoPathError(GraphError):
    pass


@dataclass(eq=False)
class WorldGraph:
    """Undirected graph with planar node coordinates.

    Node ids are the dense integers ``0..n-1``; edge weights are the Euclidean
    distance between endpoints. Treat instances as immutable once built.
    """

    coords: np.ndarray
    edges: list[tuple[int, int]]
    adjacency: list[list[tuple[int, float]]] = field(init=False, repr=False)
    csr: tuple[np.ndarray, np.ndarray, np.ndarray] = field(init=False, repr=False)
    component: np.ndarray = field(init=False, repr=False)
    _members: dict[int, np.ndarray] = field(init=False, repr=False)
    _coverage: dict[float, object] = field(init=False, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        n = len(self.coords)
        if n == 0:
            raise GraphError("graph has no nodes")
        seen = set()
        adjacency: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references a missing node")
            if a == b:
                raise GraphError(f"self-loop on node {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                continue
            seen.add(key)
            w = float(np.hypot(*(self.coords[a] - self.coords[b])))
            if w <= 0:
                raise GraphError(f"edge ({a}, {b}) has zero length")
            adjacency[a].append((b, w))
            adjacency[b].append((a, w))
        self.edges = sorted(seen)
        for nbrs in adjacency:
            nbrs.sort()
        self.adjacency = adjacency
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(a) for a in adjacency])
        indices = np.array([v for a in adjacency for v, _ in a], dtype=np.int64)
        weights = np.array([w for a in adjacency for _, w in a], dtype=float)
        self.csr = (indptr, indices, weights)

        if self.edges:
            a, b = np.array(self.edges).T
            mat = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
        else:
            mat = coo_matrix((n, n))
        _, self.component = connected_components(mat, directed=False)
        self._members = {}
        self._coverage = {}

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def has_edge(self, a: int, b: int) -> bool:
        return any(v == b for v, _ in self.adjacency[a])

    def weight(self, a: int, b: int) -> float:
        for v, w in self.adjacency[a]:
            if v == b:
                return w
        raise GraphError(f"nodes {a} and {b} are not adjacent")

    def path_cost(self, path) -> float:
        return float(sum(self.weight(a, b) for a, b in zip(path, path[1:])))

    def reachable(self, node: int) -> np.ndarray:
        """Sorted node ids in the connected component of ``node``."""
        label = int(self.component[node])
        members = self._members.get(label)
        if members is None:
            members = np.flatnonzero(self.component == label)
            self._members[label] = members
        return members

    def within_radius(self, radius: float):
        """Sparse 0/1 matrix: row i marks nodes at distance <= radius from i."""
        key = float(radius)
        cov = self._coverage.get(key)
        if cov is None:
            tree = cKDTree(self.coords)
            # tiny slack so lattice points exactly on the circle are kept
            hits = tree.query_ball_point(self.coords, key * (1 + 1e-12) + 1e-12)
            rows = np.repeat(np.arange(self.n_nodes), [len(h) for h in hits])
            cols = np.concatenate([np.asarray(h, dtype=int) for h in hits])
            cov = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes,) * 2).tocsr()
            self._coverage[key] = cov
        return cov


def build_grid_world(rows: int, cols: int, obstacle_mask=None) -> WorldGraph:
    """One node per free cell at ``(col, row)``; 4-connected unit edges.

    Node ids follow row-major order over free cells.
    """
    if rows < 1 or cols < 1:
        raise GraphError("grid dimensions must be positive")
    if obstacle_mask is None:
        mask = np.zeros((rows, cols), dtype=bool)
    else:
        mask = np.asarray(obstacle_mask, dtype=bool)
        if mask.shape != (rows, cols):
            raise GraphError(f"obstacle mask shape {mask.shape} != {(rows, cols)}")
    free = ~mask
    if not free.any():
        raise GraphError("grid has no free cells")
    ids = -np.ones((rows, cols), dtype=int)
    ids[free] = np.arange(int(free.sum()))
    rr, cc = np.nonzero(free)
    coords = np.column_stack([cc, rr]).astype(float)
    edges = []
    right = free[:, :-1] & free[:, 1:]
    for r, c in zip(*np.nonzero(right)):
        edges.append((int(ids[r, c]), int(ids[r, c + 1])))
    down = free[:-1, :] & free[1:, :]
    for r, c in zip(*np.nonzero(down)):
        edges.append((int(ids[r, c]), int(ids[r + 1, c])))
    return WorldGraph(coords, edges)


def astar_path(g: WorldGraph, src: int, dst: int) -> list[int]:
    """Shortest path from ``src`` to ``dst`` with a Euclidean heuristic.

    Frontier ties on f-cost pop the lowest node id first.
    """
    n = g.n_nodes
    if not (0 <= src < n and 0 <= dst < n):
        raise GraphError(f"invalid node id in ({src}, {dst})")
    if src == dst:
        return [src]
    if g.component[src] != g.component[dst]:
        raise NoPathError(f"no path from {src} to {dst}")
    indptr, indices, weights = g.csr
    path = _astar_kernel(indptr, indices, weights, g.coords[:, 0], g.coords[:, 1], src, dst)
    if len(path) == 0:
        raise NoPathError(f"no path from {src} to {dst}")
    return path.tolist()


@numba.njit(cache=True)
def _astar_kernel(indptr, indices, weights, xs, ys, src, dst):
    n = len(xs)
    gscore = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    tx = xs[dst]
    ty = ys[dst]
    gscore[src] = 0.0
    heap = [(math.hypot(xs[src] - tx, ys[src] - ty), np.int64(src))]
    found = False
    while len(heap) > 0:
        item = heapq.heappop(heap)
        u = item[1]
        if closed[u]:
            continue
        if u == dst:
            found = True
            break
        closed[u] = True
        gu = gscore[u]
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if closed[v]:
                continue
            cand = gu + weights[k]
            if cand < gscore[v]:
                gscore[v] = cand
                parent[v] = u
                heapq.heappush(heap, (cand + math.hypot(xs[v] - tx, ys[v] - ty), np.int64(v)))
    if not found:
        return np.empty(0, dtype=np.int64)
    length = 1
    v = dst
    while v != src:
        v = parent[v]
        length += 1
    out = np.empty(length, dtype=np.int64)
    v = dst
    for i in range(length - 1, -1, -1):
        out[i] = v
        v = parent[v]
    return out


def dijkstra_cost(g: WorldGraph, src: int, dst: int) -> float:
    """Plain Dijkstra distance; kept deliberately independent of :func:`astar_path`."""
    dist = [math.inf] * g.n_nodes
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == dst:
            return d
        for v, w in g.adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    raise NoPathError(f"no path from {src} to {dst}")


# -- file formats -----------------------------------------------------------

def load_graph(path) -> WorldGraph:
    """Read the sectioned CSV format (``nodes`` rows ``id,x,y`` then ``edges`` rows ``a,b``)."""
    section = None
    nodes: dict[int, tuple[float, float]] = {}
    node_line: dict[int, int] = {}
    edges: list[tuple[int, int, int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.lower() in ("nodes", "edges"):
                section = line.lower()
                continue
            parts = [s.strip() for s in line.split(",")]
            try:
                if section == "nodes":
                    if len(parts) != 3:
                        raise ValueError("expected id,x,y")
                    nid = int(parts[0])
                    if nid in nodes:
                        raise ValueError(f"duplicate node id {nid}")
                    nodes[nid] = (float(parts[1]), float(parts[2]))
                    node_line[nid] = lineno
                elif section == "edges":
                    if len(parts) != 2:
                        raise ValueError("expected id_a,id_b")
                    edges.append((int(parts[0]), int(parts[1]), lineno))
                else:
                    raise ValueError("row outside a 'nodes' or 'edges' section")
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None

    n = len(nodes)
    if n == 0:
        raise GraphError(f"{path}: no nodes")
    if sorted(nodes) != list(range(n)):
        bad = next(i for i in sorted(nodes) if i >= n or i < 0)
        raise GraphError(f"{path}:{node_line[bad]}: node ids must be dense 0..{n - 1}")
    for a, b, lineno in edges:
        for v in (a, b):
            if v not in nodes:
                raise GraphError(f"{path}:{lineno}: edge endpoint {v} is not a node")
        if a == b:
            raise GraphError(f"{path}:{lineno}: self-loop on node {a}")
        if nodes[a] == nodes[b]:
            raise GraphError(f"{path}:{lineno}: edge ({a}, {b}) has zero length")
    coords = np.array([nodes[i] for i in range(n)])
    return WorldGraph(coords, [(a, b) for a, b, _ in edges])


def save_graph(g: WorldGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write("nodes\n")
        for i, (x, y) in enumerate(g.coords.tolist()):
            fh.write(f"{i},{x!r},{y!r}\n")
        fh.write("edges\n")
        for a, b in g.edges:
            fh.write(f"{a},{b}\n")


def read_grid_mask(path) -> np.ndarray:
    """Parse a text grid of ``.`` (free) and ``#`` (obstacle); returns the obstacle mask."""
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.rstrip("\n\r")
        if not line:
            continue
        if set(line) - {".", "#"}:
            raise GraphError(f"{path}:{lineno}: only '.' and '#' are allowed")
        rows.append([ch == "#" for ch in line])
    if not rows:
        raise GraphError(f"{path}: empty grid")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise GraphError(f"{path}: ragged grid row {i + 1}")
    return np.array(rows, dtype=bool)


def load_grid(path) -> WorldGraph:
    mask = read_grid_mask(path)
    return build_grid_world(mask.shape[0], mask.shape[1], mask)
