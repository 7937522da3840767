"""Definition-level proximity graphs: RNG, GRNG, GG, MST and kNN.

These are the ground truth the hierarchy is checked against, so they share
nothing with it beyond the scalar metric: distances are recomputed into a
full matrix and every pair is decided straight from the definition.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .metric import Dataset, MetricFn, RejectedInputError, find_duplicates, get_metric, pairwise

DEFAULT_ORACLE_CAP = 5000


class OracleCapExceeded(RejectedInputError):
    pass


@dataclass(frozen=True)
class UndirectedGraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "UndirectedGraph":
        edges = set()
        for u, v in pairs:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
            edges.add((u, v) if u < v else (v, u))
        return cls(n, frozenset(edges))

    def __len__(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.sorted_edges():
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def degrees(self) -> list[int]:
        deg = [0] * self.n
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    @property
    def average_degree(self) -> float:
        return 2.0 * len(self.edges) / self.n if self.n else 0.0

    def degree_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.degrees()).items()))

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        comps = self.n
        for u, v in self.edges:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
                comps -= 1
        return comps == 1

    def issubset(self, other: "UndirectedGraph") -> bool:
        return self.edges <= other.edges

    def diff(self, reference: "UndirectedGraph") -> tuple[set, set]:
        """``(extra, missing)`` edges of ``self`` relative to ``reference``."""
        return set(self.edges - reference.edges), set(reference.edges - self.edges)

    def to_edge_list(self) -> str:
        return "".join(f"{u} {v}\n" for u, v in self.sorted_edges())

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "edges": [list(e) for e in self.sorted_edges()],
                "average_degree": self.average_degree,
                "degree_histogram": {str(k): v for k, v in self.degree_histogram().items()},
            }
        )

    @classmethod
    def from_edge_list(cls, n: int, text: str) -> "UndirectedGraph":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'u v', got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
        return cls.from_pairs(n, pairs)


# --------------------------------------------------------------------------
# predicates


def lune_contains(x1, x2, x3, metric: MetricFn | str = "l2") -> bool:
    """True when ``x3`` lies strictly inside lune(x1, x2)."""
    fn = get_metric(metric) if isinstance(metric, str) else metric
    d12 = fn(x1, x2)
    return max(fn(x3, x1), fn(x3, x2)) < d12


def glune_contains(pk, pi, ri: float, pj, rj: float, metric: MetricFn | str = "l2") -> bool:
    """True when pivot ``pk`` lies in the generalized lune of ``(pi, ri)`` and ``(pj, rj)``."""
    if ri < 0 or rj < 0:
        raise ValueError("radii must be non-negative")
    fn = get_metric(metric) if isinstance(metric, str) else metric
    dij = fn(pi, pj)
    return fn(pk, pi) < dij - (2 * ri + rj) and fn(pk, pj) < dij - (ri + 2 * rj)


def glune_contains_d(dki: float, dkj: float, dij: float, ri: float, rj: float) -> bool:
    return dki < dij - (2 * ri + rj) and dkj < dij - (ri + 2 * rj)


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _grng_edges(D, radii):
    n = D.shape[0]
    out = []
    for i in range(n):
        ri = radii[i]
        for j in range(i + 1, n):
            rj = radii[j]
            dij = D[i, j]
            ti = dij - (2.0 * ri + rj)
            tj = dij - (ri + 2.0 * rj)
            blocked = False
            if ti > 0.0 and tj > 0.0:
                for k in range(n):
                    if k != i and k != j and D[k, i] < ti and D[k, j] < tj:
                        blocked = True
                        break
            if not blocked:
                out.append((i, j))
    return out


@numba.njit(cache=True)
def _rng_edges(D):
    n = D.shape[0]
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            dij = D[i, j]
            blocked = False
            for k in range(n):
                if k != i and k != j and D[k, i] < dij and D[k, j] < dij:
                    blocked = True
                    break
            if not blocked:
                out.append((i, j))
    return out


@numba.njit(cache=True)
def _gg_edges(S):
    # S holds squared distances
    n = S.shape[0]
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            d2 = S[i, j]
            blocked = False
            for k in range(n):
                if k != i and k != j and S[k, i] + S[k, j] < d2:
                    blocked = True
                    break
            if not blocked:
                out.append((i, j))
    return out


# --------------------------------------------------------------------------
# constructions


def _points_and_metric(dataset, metric):
    if isinstance(dataset, Dataset):
        pts = dataset.tuples()
        fn = metric if metric is not None else dataset.metric_fn
    else:
        pts = [tuple(float(v) for v in p) for p in dataset]
        fn = metric if metric is not None else "l2"
    fn = get_metric(fn) if isinstance(fn, str) else fn
    return pts, fn


def _check_cap(n: int, cap: int | None) -> None:
    if cap is not None and n > cap:
        raise OracleCapExceeded(f"N={n} exceeds the oracle cap of {cap}")


def distance_matrix(dataset, metric=None) -> np.ndarray:
    pts, fn = _points_and_metric(dataset, metric)
    return pairwise(pts, fn)


def _empty_edges(n):
    return UndirectedGraph(n, frozenset())


def brute_rng(dataset, metric=None, cap: int | None = None, D: np.ndarray | None = None) -> UndirectedGraph:
    """RNG straight from the empty-lune definition, O(N^3) worst case."""
    pts, fn = _points_and_metric(dataset, metric)
    n = len(pts)
    _check_cap(n, cap)
    if n < 2:
        return _empty_edges(n)
    if find_duplicates(np.asarray(pts)):
        raise RejectedInputError("duplicate points")
    if D is None:
        D = pairwise(pts, fn)
    return UndirectedGraph.from_pairs(n, _rng_edges(D))


def brute_grng(pivots: Sequence[tuple[Sequence[float], float]], metric=None, cap: int | None = None) -> UndirectedGraph:
    """GRNG over ``(point, radius)`` pivots straight from the generalized-lune definition."""
    pts = [tuple(float(v) for v in p) for p, _ in pivots]
    radii = np.array([float(r) for _, r in pivots], dtype=np.float64)
    if np.any(radii < 0):
        raise ValueError("radii must be non-negative")
    n = len(pts)
    _check_cap(n, cap)
    if n < 2:
        return _empty_edges(n)
    fn = metric if callable(metric) else get_metric(metric or "l2")
    D = pairwise(pts, fn)
    return UndirectedGraph.from_pairs(n, _grng_edges(D, radii))


def squared_l2_matrix(pts) -> np.ndarray:
    """Squared Euclidean distances without a square root, so boundary ties stay exact."""
    X = np.asarray(pts, dtype=np.float64)
    n = len(X)
    S = np.zeros((n, n))
    for k in range(X.shape[1]):
        diff = X[:, k][:, None] - X[:, k][None, :]
        S += diff * diff
    return S


def brute_gg(dataset, metric=None, cap: int | None = None) -> UndirectedGraph:
    """Gabriel graph: an edge survives unless some x3 has d²(x3,x1)+d²(x3,x2) < d²(x1,x2)."""
    pts, fn = _points_and_metric(dataset, metric)
    n = len(pts)
    _check_cap(n, cap)
    if n < 2:
        return _empty_edges(n)
    if fn is get_metric("l2"):
        S = squared_l2_matrix(pts)
    else:
        S = pairwise(pts, fn) ** 2
    return UndirectedGraph.from_pairs(n, _gg_edges(S))


def brute_mst(dataset, metric=None, cap: int | None = None) -> UndirectedGraph:
    """Kruskal over all pairs; equal weights are taken in lexicographic (u, v) order."""
    pts, fn = _points_and_metric(dataset, metric)
    n = len(pts)
    _check_cap(n, cap)
    if n < 2:
        return _empty_edges(n)
    D = pairwise(pts, fn)
    iu, ju = np.triu_indices(n, k=1)
    w = D[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for e in order:
        u, v = int(iu[e]), int(ju[e])
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            edges.append((u, v))
            if len(edges) == n - 1:
                break
    return UndirectedGraph.from_pairs(n, edges)


def brute_knn(dataset, k: int, metric=None, cap: int | None = None) -> list[list[int]]:
    """Directed k-nearest-neighbor lists; ties go to the smaller id."""
    pts, fn = _points_and_metric(dataset, metric)
    n = len(pts)
    _check_cap(n, cap)
    if k < 1 or k >= n:
        raise RejectedInputError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    D = pairwise(pts, fn)
    out = []
    ids = np.arange(n)
    for i in range(n):
        order = np.lexsort((ids, D[i]))
        out.append([int(j) for j in order if j != i][:k])
    return out


def knn_graph(lists: list[list[int]]) -> UndirectedGraph:
    return UndirectedGraph.from_pairs(len(lists), ((i, j) for i, js in enumerate(lists) for j in js))


def rng_neighbors_of_query(dataset, q: Sequence[float], metric=None) -> set[int]:
    """RNG neighbours of ``q`` in RNG(S ∪ {q}), by brute force over the augmented set."""
    pts, fn = _points_and_metric(dataset, metric)
    q = tuple(float(v) for v in q)
    n = len(pts)
    dq = np.array([fn(q, p) for p in pts])
    if n and np.any(dq == 0):
        raise RejectedInputError("query duplicates a dataset point")
    D = pairwise(pts, fn) if n <= DEFAULT_ORACLE_CAP else None
    out = set()
    for i in range(n):
        dqi = dq[i]
        cand = np.nonzero(dq < dqi)[0]
        if D is not None:
            row = D[i, cand]
        else:
            row = np.array([fn(pts[i], pts[k]) for k in cand])
        if not np.any(row < dqi):
            out.add(i)
    return out
