"""Stop and segment graphs, normalized adjacency, and per-event node snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Route, Segment
from .features import Dataset, LagIndex, Observation


@dataclass(frozen=True)
class GraphSpec:
    nodes: Tuple[str, ...]
    A: np.ndarray
    A_hat: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self, key: str) -> int:
        return self.nodes.index(key)

    def edges(self) -> List[Tuple[str, str]]:
        i, j = np.nonzero(np.triu(self.A))
        return [(self.nodes[a], self.nodes[b]) for a, b in zip(i, j)]

    def permuted(self, perm: Sequence[int]) -> "GraphSpec":
        """Graph with node ``k`` of the result equal to node ``perm[k]`` here."""
        p = np.asarray(perm)
        A = self.A[np.ix_(p, p)]
        return GraphSpec(tuple(self.nodes[k] for k in p), A, normalize_adjacency(A))


def _graph(nodes: List[str], pairs: Iterable[Tuple[str, str]]) -> GraphSpec:
    pos = {k: i for i, k in enumerate(nodes)}
    A = np.zeros((len(nodes), len(nodes)), dtype=np.int64)
    for a, b in pairs:
        if a != b:
            A[pos[a], pos[b]] = A[pos[b], pos[a]] = 1
    return GraphSpec(tuple(nodes), A, normalize_adjacency(A))


def build_stop_graph(routes: Iterable[Route]) -> GraphSpec:
    """One node per stop, undirected edge between consecutive stops of any route."""
    routes = list(routes.values()) if isinstance(routes, dict) else list(routes)
    nodes: List[str] = []
    pairs = []
    for r in routes:
        for s in r.stops:
            if s not in nodes:
                nodes.append(s)
        pairs.extend(zip(r.stops, r.stops[1:]))
    return _graph(nodes, pairs)


def build_segment_graph(routes: Iterable[Route]) -> GraphSpec:
    """One node per directed segment; edges join segments that follow each other on a route."""
    routes = list(routes.values()) if isinstance(routes, dict) else list(routes)
    nodes: List[str] = []
    pairs = []
    for r in routes:
        segs = [s.key for s in r.segments()]
        for s in segs:
            if s not in nodes:
                nodes.append(s)
        pairs.extend(zip(segs, segs[1:]))
        if r.is_loop and len(segs) > 1:
            pairs.append((segs[-1], segs[0]))
    return _graph(nodes, pairs)


def normalize_adjacency(A) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if not np.isin(A, (0, 1)).all():
        raise ValueError("adjacency must be binary")
    if np.any(np.diag(A) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    At = A.astype(float) + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(At.sum(axis=1))
    return d[:, None] * At * d[None, :]


@dataclass(frozen=True)
class Snapshot:
    X: np.ndarray  # (|V|, d)
    y: np.ndarray  # (|V|,), NaN where unobserved
    mask: np.ndarray  # (|V|,) bool


@dataclass
class SnapshotSet:
    """Stacked per-event snapshots; snapshot ``n`` belongs to dataset row ``n``."""

    X: np.ndarray  # (N, |V|, d)
    y: np.ndarray  # (N, |V|)
    mask: np.ndarray  # (N, |V|)
    node: np.ndarray  # (N,) index of the observed node

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, n: int) -> Snapshot:
        return Snapshot(self.X[n], self.y[n], self.mask[n])

    def subset(self, idx) -> "SnapshotSet":
        idx = np.asarray(idx)
        return SnapshotSet(self.X[idx], self.y[idx], self.mask[idx], self.node[idx])

    def permuted(self, perm: Sequence[int]) -> "SnapshotSet":
        p = np.asarray(perm)
        inv = np.argsort(p)
        return SnapshotSet(self.X[:, p], self.y[:, p], self.mask[:, p], inv[self.node])


def build_snapshots(
    dataset: Dataset,
    graph: GraphSpec,
    history: Optional[Iterable[Observation]] = None,
) -> SnapshotSet:
    """Per-event node feature matrices.

    Node ``k`` of snapshot ``n`` carries row ``n``'s time, weather and vehicle
    features, node ``k``'s key one-hot, and node ``k``'s lags as of row ``n``'s
    timestamp. The observed node's row is the dataset row itself.
    """
    enc = dataset.encoder
    missing = [k for k in graph.nodes if k not in enc.key_vocab]
    if missing:
        raise ValueError(f"graph nodes outside the key vocabulary: {missing[:5]}")
    N, d, V = len(dataset), enc.dim, graph.n
    obs = list(history) if history is not None else dataset.observations()
    index = LagIndex(obs, dataset.scope)

    X = np.empty((N, V, d))
    X[:] = dataset.X[:, None, :]
    X[:, :, enc.key_offset : enc.lag_offset] = 0.0
    for v, key in enumerate(graph.nodes):
        X[:, v, enc.key_offset + enc.key_index(key)] = 1.0
        X[:, v, enc.lag_offset : enc.lag_offset + 4] = index.query_many(dataset.vehicles, key, dataset.t)

    node = np.array([graph.index(k) for k in dataset.keys], dtype=np.int64)
    rows = np.arange(N)
    X[rows, node] = dataset.X
    mask = np.zeros((N, V), dtype=bool)
    mask[rows, node] = True
    y = np.full((N, V), np.nan)
    y[rows, node] = dataset.y
    return SnapshotSet(X, y, mask, node)


def spectral_radius(M: np.ndarray, iters: int = 1000, seed: int = 0) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=M.shape[0])
    v /= np.linalg.norm(v)
    nrm = 0.0
    for _ in range(iters):
        w = M @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            break
        v = w / nrm
    return nrm


def segment_nodes(graph: GraphSpec) -> List[Segment]:
    return [Segment.parse(k) for k in graph.nodes]
