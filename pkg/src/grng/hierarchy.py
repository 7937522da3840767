"""Multi-layer GRNG pivot hierarchy with exact incremental RNG construction.

Layer 0 is the coarsest; the last layer has radius 0 and holds every point,
so its GRNG is the RNG of the data. Each layer's point set contains the one
above it. Every entry below the top keeps the coarser-layer pivots that
cover it (``d(p, x) <= r_c - r_f``), and that coverage is what the pruning
arguments rest on.

Inserting a point walks the layers top-down. For each layer the coarse
layer above proposes and filters candidates (stages S1-S3), pivots and
nearby items try to knock out candidate links cheaply (S4, S5), an
exhaustive but domain-pruned check decides the survivors (S6) and finally
existing links whose generalized lune now contains the new point are
dropped (S7). Search runs S1-S6 without touching the index.
"""

from __future__ import annotations

import heapq
from bisect import bisect_left, bisect_right
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

from .metric import (
    CountedMetric,
    DataPoint,
    Dataset,
    DimensionMismatchError,
    DuplicatePointError,
    Episode,
    RejectedInputError,
    StageStats,
    get_metric,
)
from .oracles import UndirectedGraph, brute_grng

NEG_INF = float("-inf")
PRUNING_STAGES = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")
# relative slack applied to pruning bounds (never to lune tests themselves)
_REL_TOL = 1e-12

QUERY_ID = -1


class EmptyHierarchyError(RuntimeError):
    pass


@dataclass
class HierarchyConfig:
    """How the layers are laid out and which pruning stages run.

    ``radii`` (coarse to fine, ending in 0) wins over the geometric schedule
    ``top_radius * decay**l``. With neither ``radii`` nor ``top_radius``,
    the top radius is half the sampled diameter of the dataset being built.
    """

    layers: int = 2
    radii: list[float] | None = None
    top_radius: float | None = None
    decay: float = 0.25
    k_budget: int = 25
    seed: int = 0
    disabled: frozenset = frozenset()
    cache: bool = True
    record_survivors: bool = False

    def __post_init__(self):
        self.disabled = frozenset(self.disabled)
        bad = self.disabled - set(PRUNING_STAGES)
        if bad:
            raise ValueError(f"unknown stages {sorted(bad)}")
        if self.k_budget < 1:
            raise ValueError("k_budget must be >= 1")
        if self.radii is not None:
            self.radii = [float(r) for r in self.radii]
            check_radii(self.radii)
            self.layers = len(self.radii)
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if not 0 < self.decay < 1:
            raise ValueError("decay must be in (0, 1)")

    def resolve(self, points: Sequence[Sequence[float]] | None = None, metric="l2") -> list[float]:
        if self.radii is not None:
            return list(self.radii)
        if self.layers == 1:
            return [0.0]
        top = self.top_radius
        if top is None:
            if points is None:
                raise ValueError("geometric radii need top_radius or a dataset to size it from")
            top = 0.5 * estimate_diameter(points, metric, seed=self.seed)
            if top <= 0:
                top = 1.0
        radii = [top * self.decay**l for l in range(self.layers - 1)] + [0.0]
        check_radii(radii)
        return radii

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "radii": self.radii,
            "top_radius": self.top_radius,
            "decay": self.decay,
            "k_budget": self.k_budget,
            "seed": self.seed,
            "disabled": sorted(self.disabled),
            "cache": self.cache,
            "record_survivors": self.record_survivors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchyConfig":
        return cls(**{**d, "disabled": frozenset(d.get("disabled", ()))})


def check_radii(radii: Sequence[float]) -> None:
    if not radii:
        raise ValueError("empty radii schedule")
    if radii[-1] != 0:
        raise ValueError("the last (exemplar) layer must have radius 0")
    for a, b in zip(radii, radii[1:]):
        if not a > b:
            raise ValueError(f"radii must strictly decrease, got {list(radii)}")
    if any(r < 0 or not math.isfinite(r) for r in radii):
        raise ValueError("radii must be finite and non-negative")


def estimate_diameter(points, metric="l2", seed: int = 0, sweeps: int = 3, sample: int = 2000) -> float:
    """Lower estimate of the diameter by repeated farthest-point sweeps over a sample."""
    fn = get_metric(metric) if isinstance(metric, str) else metric
    pts = [tuple(p) for p in points]
    if len(pts) < 2:
        return 0.0
    rng = np.random.default_rng(seed)
    if len(pts) > sample:
        pts = [pts[i] for i in rng.choice(len(pts), sample, replace=False)]
    a = pts[int(rng.integers(len(pts)))]
    best = 0.0
    for _ in range(sweeps):
        ds = [fn(a, p) for p in pts]
        i = int(np.argmax(ds))
        best = max(best, ds[i])
        a = pts[i]
    return best


# ----------------------------------------------------------------------
# radius calibration

@numba.njit(cache=True)
def _greedy_cover(X, order, R, kind):
    # pivots chosen in order: a point becomes a pivot unless an earlier pivot lies within R
    piv = np.empty(order.shape[0], dtype=np.int64)
    m = 0
    dim = X.shape[1]
    for t in range(order.shape[0]):
        i = order[t]
        covered = False
        for s in range(m):
            j = piv[s]
            acc = 0.0
            for k in range(dim):
                diff = X[i, k] - X[j, k]
                if kind == 0:
                    acc += diff * diff
                else:
                    acc += abs(diff)
            dist = math.sqrt(acc) if kind == 0 else acc
            if dist <= R:
                covered = True
                break
        if not covered:
            piv[m] = i
            m += 1
    return piv[:m]


def calibrate_radii(points, pivot_counts: Sequence[int], metric: str = "l2", iters: int = 40) -> list[float]:
    """Radii (coarse to fine, ending in 0) whose promotion cascade yields
    roughly ``pivot_counts`` pivots per non-bottom layer (coarse to fine)
    when the points are inserted in the given order."""
    kind = {"l2": 0, "l1": 1}.get(metric)
    if kind is None:
        raise ValueError(f"calibration supports l2/l1, not {metric!r}")
    X = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    counts = list(pivot_counts)
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("pivot counts must increase from coarse to fine")
    if not counts:
        return [0.0]
    n = len(X)
    seq = np.arange(n, dtype=np.int64)
    hi0 = 2.0 * estimate_diameter(X.tolist(), metric) + 1e-9
    gaps: list[float] = []
    for target in reversed(counts):
        lo, hi = 0.0, hi0
        best = None
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            m = len(_greedy_cover(X, seq, mid, kind))
            if best is None or abs(m - target) < abs(best[1] - target):
                best = (mid, m)
            if m > target:
                lo = mid
            elif m < target:
                hi = mid
            else:
                break
        R = best[0]
        gaps.append(R)
        seq = _greedy_cover(X, seq, R, kind)
    radii = [0.0]
    for R in gaps:
        radii.append(radii[-1] + R)
    radii.reverse()
    check_radii(radii)
    return radii


def geometric_counts(n: int, layers: int, top: int = 8) -> list[int]:
    """Pivot counts growing geometrically from ``top`` towards ``n`` over the non-bottom layers."""
    if layers < 2:
        return []
    top = max(1, min(top, n))
    out = []
    for l in range(layers - 1):
        m = int(round(top * (n / top) ** (l / (layers - 1))))
        if out and m <= out[-1]:
            m = out[-1] + 1
        out.append(m)
    return out


@dataclass(slots=True, eq=False)
class PivotEntry:
    """One point's presence in one layer.

    ``reach[j]`` bounds ``d(p, x) + bar_mu_max(x)`` over descendants ``x``
    ``j + 1`` layers below, so ``reach[0]`` is the per-domain ``mu_max``.
    """

    point_id: int
    radius: float
    seq: int
    parents: dict = field(default_factory=dict)
    children: dict = field(default_factory=dict)
    neighbors: dict = field(default_factory=dict)
    coarse_nbrs: frozenset = frozenset()
    coarse_seen: int = 0
    delta_max: float = 0.0
    bar_mu_max: float = NEG_INF
    reach: list = field(default_factory=list)
    _by_len: tuple | None = field(default=None, repr=False, compare=False)

    def links_by_length(self) -> tuple[list, list]:
        """Link lengths ascending with matching ids; rebuilt lazily after changes."""
        s = self._by_len
        if s is None:
            items = sorted((d, k) for k, d in self.neighbors.items())
            s = self._by_len = ([d for d, _ in items], [k for _, k in items])
        return s

    def add_link(self, y: int, d: float) -> None:
        self.neighbors[y] = d
        s = self._by_len
        if s is not None:
            i = bisect_right(s[0], d)
            s[0].insert(i, d)
            s[1].insert(i, y)

    def drop_link(self, y: int) -> None:
        d = self.neighbors.pop(y)
        s = self._by_len
        if s is not None:
            i = bisect_left(s[0], d)
            while s[1][i] != y:
                i += 1
            del s[0][i]
            del s[1][i]

    @property
    def mu_max(self) -> float:
        return self.reach[0] if self.reach else NEG_INF

    @property
    def coarse_grng_neighbors(self) -> frozenset:
        return self.coarse_nbrs

    @property
    def grng_neighbors(self) -> dict:
        return self.neighbors


@dataclass
class Layer:
    index: int
    radius: float
    entries: dict = field(default_factory=dict)
    next_seq: int = 0

    @property
    def size(self) -> int:
        return len(self.entries)

    def edges(self) -> set[tuple[int, int]]:
        out = set()
        for u, e in self.entries.items():
            for v in e.neighbors:
                if u < v:
                    out.add((u, v))
        return out


@dataclass
class InsertReport:
    point_id: int
    added: dict = field(default_factory=dict)
    removed: dict = field(default_factory=dict)
    promoted_to: list = field(default_factory=list)
    stats: StageStats = field(default_factory=StageStats)
    survivors: dict = field(default_factory=dict)

    @property
    def new_rng_links(self) -> list[tuple[int, int]]:
        return self.added.get(max(self.added), []) if self.added else []

    @property
    def removed_rng_links(self) -> list[tuple[int, int]]:
        return self.removed.get(max(self.added), []) if self.added else []


@dataclass
class SearchResult:
    neighbors: set
    stats: StageStats
    distances: dict = field(default_factory=dict)
    survivors: dict = field(default_factory=dict)


@dataclass
class _Located:
    """Per-layer outcome of localising one query."""

    top: int
    cover: list
    links: dict = field(default_factory=dict)
    coarse_nbrs: dict = field(default_factory=dict)
    survivors: dict = field(default_factory=dict)


class Hierarchy:
    def __init__(
        self,
        config: HierarchyConfig | None = None,
        metric: CountedMetric | str = "l2",
        radii: Sequence[float] | None = None,
        dim: int | None = None,
    ):
        self.config = config or HierarchyConfig()
        self.metric = metric if isinstance(metric, CountedMetric) else CountedMetric(metric, cache=self.config.cache)
        if radii is None:
            radii = self.config.resolve()
        radii = [float(r) for r in radii]
        check_radii(radii)
        self.radii = radii
        self.layers = [Layer(i, r) for i, r in enumerate(radii)]
        self.dim = dim
        self.coords: dict[int, tuple] = {}
        self.order: list[int] = []
        self._by_coords: dict[tuple, int] = {}
        self._scale = radii[0] if radii[0] > 0 else 1.0
        self.tol = _REL_TOL * self._scale

    # ------------------------------------------------------------------
    # basic views

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def bottom(self) -> Layer:
        return self.layers[-1]

    def layer_sizes(self) -> list[int]:
        return [layer.size for layer in self.layers]

    def edge_set(self, layer: int = -1) -> set[tuple[int, int]]:
        return self.layers[layer].edges()

    def graph(self, layer: int = -1) -> UndirectedGraph:
        n = max(self.coords) + 1 if self.coords else 0
        return UndirectedGraph(n, frozenset(self.edge_set(layer)))

    def rng_graph(self) -> UndirectedGraph:
        return self.graph(-1)

    def average_degree(self) -> float:
        n = len(self.coords)
        return 2.0 * len(self.edge_set(-1)) / n if n else 0.0

    # ------------------------------------------------------------------
    # input handling

    def _coerce(self, point, pid: int | None) -> tuple[int | None, tuple]:
        if isinstance(point, DataPoint):
            pid = point.id if pid is None else pid
            coords = point.coords
        else:
            coords = point
        coords = tuple(float(v) for v in coords)
        if not coords:
            raise DimensionMismatchError("points need dimension >= 1")
        if self.dim is None:
            self.dim = len(coords)
        elif len(coords) != self.dim:
            raise DimensionMismatchError(f"expected dimension {self.dim}, got {len(coords)}")
        if not all(math.isfinite(v) for v in coords):
            raise RejectedInputError("coordinates must be finite")
        return pid, coords

    @staticmethod
    def _point_scale(coords: tuple) -> float:
        # generous bound on distances involving this point (L1 <= 2 d max|x|)
        return 2.0 * len(coords) * max(abs(v) for v in coords)

    def _grow_scale(self, coords: tuple) -> None:
        s = self._point_scale(coords)
        if s > self._scale:
            self._scale = s
            self.tol = _REL_TOL * s

    def _episode(self, q: tuple) -> Episode:
        ep = self.metric.episode(q)
        ep.tol = _REL_TOL * max(self._scale, self._point_scale(q))
        return ep

    # ------------------------------------------------------------------
    # public operations

    def insert(self, point, pid: int | None = None) -> InsertReport:
        pid, q = self._coerce(point, pid)
        if q in self._by_coords:
            raise DuplicatePointError(
                f"point duplicates existing id {self._by_coords[q]}", [(pid, self._by_coords[q])]
            )
        if pid is None:
            pid = max(self.coords) + 1 if self.coords else 0
        if pid in self.coords:
            raise RejectedInputError(f"id {pid} already present")
        self._grow_scale(q)
        ep = self._episode(q)
        ep.cache[pid] = 0.0
        report = InsertReport(pid)
        self.coords[pid] = q
        try:
            loc = self._locate(ep, pid, q, commit=True, report=report)
        except BaseException:
            del self.coords[pid]
            raise
        finally:
            report.stats = ep.close()
        report.promoted_to = list(range(loc.top, self.n_layers - 1))
        report.survivors = loc.survivors
        self._by_coords[q] = pid
        self.order.append(pid)
        return report

    def search(self, point) -> SearchResult:
        """RNG neighbours the point would have if inserted; the index is untouched."""
        if not self.coords:
            raise EmptyHierarchyError("search on an empty hierarchy")
        _, q = self._coerce(point, None)
        if q in self._by_coords:
            raise DuplicatePointError(f"query duplicates existing id {self._by_coords[q]}")
        ep = self._episode(q)
        try:
            loc = self._locate(ep, QUERY_ID, q, commit=False)
        finally:
            stats = ep.close()
        bottom = loc.links.get(self.n_layers - 1, {})
        return SearchResult(set(bottom), stats, dict(bottom), loc.survivors)

    # ------------------------------------------------------------------
    # localisation

    def _locate(self, ep: Episode, qid: int, q: tuple, commit: bool, report: InsertReport | None = None) -> _Located:
        L = self.n_layers
        cover = self._parent_scan(ep, q)
        top = 0
        for l in range(L - 2, -1, -1):
            if cover[l]:
                top = l + 1
                break
        loc = _Located(top, cover)
        if not self.layers[0].entries:
            if commit:
                for l in range(L):
                    own = {} if l == 0 else {qid: 0.0}
                    self._commit(l, qid, q, own, {}, frozenset(own), [], report)
            return loc
        if top == 0:
            links = self._insert_top(ep, qid)
            loc.links[0] = links
            if commit:
                removed = self._invalidate_top(ep)
                self._commit(0, qid, q, {}, links, frozenset(), removed, report)
        for f in range(max(top, 1), L):
            c = f - 1
            parents = cover[c] if f == top else {qid: 0.0}
            links, gq, surv = self._layer_links(ep, qid, f, parents, loc.links.get(c), commit)
            loc.links[f] = links
            loc.coarse_nbrs[f] = gq
            if surv:
                loc.survivors[f] = surv
            if commit:
                removed = self._invalidate(ep, f)
                self._commit(f, qid, q, parents, links, gq, removed, report)
        return loc

    def _parent_scan(self, ep: Episode, q: tuple) -> list[dict]:
        """Covering pivots of ``q`` at every layer but the bottom.

        Descends from the top, entering a pivot's children only when some
        descendant could still be within covering range.
        """
        L = self.n_layers
        radii = self.radii
        cover: list[dict] = [dict() for _ in range(L - 1)]
        if L == 1 or not self.layers[0].entries:
            return cover
        coords = self.coords
        tol = ep.tol
        frontier: Iterable[int] = list(self.layers[0].entries)
        for k in range(L - 1):
            entries = self.layers[k].entries
            R = radii[k] - radii[k + 1]
            descend = radii[k + 1] + tol
            stage = "S1" if k == 0 else "parent-scan"
            nxt: set[int] = set()
            ck = cover[k]
            last = k == L - 2
            for pid in frontier:
                e = entries[pid]
                d = ep.cache.get(pid)
                if d is None:
                    d = ep.dq(pid, coords[pid], k, stage)
                if d <= R:
                    ck[pid] = d
                if not last and d - e.delta_max <= descend:
                    nxt.update(e.children)
            frontier = nxt
        return cover

    # -- top layer: brute force GRNG among few pivots ---------------------

    def _insert_top(self, ep: Episode, qid: int) -> dict:
        layer = self.layers[0]
        entries = layer.entries
        coords = self.coords
        r = layer.radius
        dist = sorted((ep.dq(p, coords[p], 0, "S1"), p) for p in entries)
        links = {}
        tol = ep.tol
        for D, pj in dist:
            thr = D - 3 * r
            blocked = False
            if thr > 0:
                nb = entries[pj].neighbors
                cj = coords[pj]
                for dk, pk in dist:
                    if dk >= thr:
                        break
                    if pk == pj or D - dk >= thr + tol:
                        continue
                    djk = nb.get(pk)
                    if djk is None:
                        djk = ep.d(cj, coords[pk], 0, "S1")
                    if djk < thr:
                        blocked = True
                        break
            if not blocked:
                links[pj] = D
        return links

    def _invalidate_top(self, ep: Episode) -> list[tuple[int, int]]:
        layer = self.layers[0]
        r = layer.radius
        coords = self.coords
        removed = []
        for u, e in layer.entries.items():
            du = ep.dq(u, coords[u], 0, "S7")
            for v, duv in e.neighbors.items():
                if u < v:
                    t = duv - 3 * r
                    if du < t and ep.dq(v, coords[v], 0, "S7") < t:
                        removed.append((u, v))
        return removed

    # -- one fine layer guided by its coarse layer ------------------------

    def _layer_links(self, ep: Episode, qid: int, f: int, parents: dict, q_coarse_links: dict | None, commit: bool):
        cfg = self.config
        off = cfg.disabled
        coarse = self.layers[f - 1]
        fine = self.layers[f]
        Ce = coarse.entries
        Fe = fine.entries
        rc, rf = coarse.radius, fine.radius
        coords = self.coords
        tol = ep.tol
        c = f - 1
        dq = ep.dq
        q_in_coarse = qid in parents
        record = cfg.record_survivors
        surv: dict[str, int] = {}

        # S1: candidate coarse neighbours
        if "S1" in off:
            A = set(Ce)
            if q_in_coarse:
                A.add(qid)
        elif q_in_coarse:
            A = set(q_coarse_links or ())
            A.add(qid)
        else:
            A = None
            for p in parents:
                s = set(Ce[p].neighbors)
                s.add(p)
                A = s if A is None else A & s
            A = A or set()
        if record:
            surv["S1"] = len(_union_children(Ce, A, qid))

        # S2: Q as a virtual pivot of the fine radius
        G = set()
        t_q = 2 * rf + rc
        t_p = rf + 2 * rc
        for pj in A:
            if pj == qid:
                G.add(pj)
                continue
            D = ep.cache.get(pj)
            if D is None:
                D = ep.dq(pj, coords[pj], c, "S1")
            if "S2" in off:
                G.add(pj)
                continue
            t1 = D - t_q
            t2 = D - t_p
            blocked = False
            if t1 > 0 and t2 > 0:
                lens, ids = Ce[pj].links_by_length()
                # only links with t_q < d(pj, pk) < t2 can block
                lo = bisect_left(lens, t_q - tol)
                hi = bisect_left(lens, t2 - tol)
                for i in range(lo, hi):
                    pk, djk = ids[i], lens[i]
                    if pk == qid or D - djk >= t1:
                        continue
                    if dq(pk, coords[pk], c, "S2") < t1 - tol:
                        blocked = True
                        break
            if not blocked:
                G.add(pj)
        if record:
            surv["S2"] = len(_union_children(Ce, G, qid))

        # S3: fine candidates from the surviving coarse domains
        X: set[int] = set()
        for p in G:
            if p != qid:
                X.update(Ce[p].children)
        if "S3" not in off:
            checks = [(p, Ce[p].seq) for p in parents if p != qid]
            keep = []
            for x in X:
                e = Fe[x]
                ok = True
                for pp in e.parents:
                    if pp not in G:
                        ok = False
                        break
                if ok:
                    cn = e.coarse_nbrs
                    seen = e.coarse_seen
                    for p, seq in checks:
                        if seq < seen and p not in cn:
                            ok = False
                            break
                if ok:
                    keep.append(x)
        else:
            keep = list(X)
        if record:
            surv["S3"] = len(keep)

        # distances to the remaining candidates
        rq = rf
        cand = []
        links: dict[int, float] = {}
        for x in keep:
            D = ep.cache.get(x)
            if D is None:
                D = ep.dq(x, coords[x], f, "S3")
            thr = D - (2 * rq + rf)
            if thr <= 0:
                links[x] = D
            else:
                cand.append((D, thr, x))
        cand.sort()

        # S4: coarse pivots already measured from Q, judged on stored lengths only.
        # d(pk, x) <= d(pk, p) + d(p, x) for a parent p of x, so for each parent we
        # keep the nearest pivots sorted by d(Q, pk) with a running min of d(pk, p).
        if "S4" not in off and cand:
            cached = ep.cache
            piv = sorted((d, p) for p, d in cached.items() if p in Ce and p != qid)
            # nearest pivots are the likeliest occupiers; the cap only limits pruning effort
            piv = piv[: cfg.k_budget]
            tables: dict[int, tuple[list, list]] = {}
            rest = []
            for D, thr, x in cand:
                blocked = False
                lim = thr - tol
                for p, dpx in Fe[x].parents.items():
                    if dpx >= lim:
                        continue
                    dp = cached.get(p)
                    if dp is not None and dp < thr and p != x:
                        blocked = True
                        break
                    t = tables.get(p)
                    if t is None:
                        nb = Ce[p].neighbors
                        dks: list[float] = []
                        mins: list[float] = []
                        m = math.inf
                        for dk, pk in piv:
                            dpk = nb.get(pk)
                            if dpk is None:
                                continue
                            if dpk < m:
                                m = dpk
                            dks.append(dk)
                            mins.append(m)
                        t = tables[p] = (dks, mins)
                    n_in = bisect_left(t[0], thr)
                    if n_in and t[1][n_in - 1] + dpx < lim:
                        blocked = True
                        break
                if not blocked:
                    rest.append((D, thr, x))
            cand = rest
        if record:
            surv["S4"] = len(cand) + len(links)

        # S5: nearby items first, within a per-candidate budget
        if "S5" not in off and cand:
            budget = cfg.k_budget
            cached = ep.cache
            near_q = sorted((d, y) for y, d in cached.items() if y in Fe)
            rest = []
            for D, thr, x in cand:
                if not self._stage5_blocked(ep, f, x, D, thr, near_q, budget):
                    rest.append((D, thr, x))
            cand = rest
        if record:
            surv["S5"] = len(cand) + len(links)

        # S6: exhaustive check over every item that could sit in the lune
        if cand:
            if "S6" in off:
                for D, thr, x in cand:
                    if not self._lune_occupied_exhaustive(ep, f, x, D, thr):
                        links[x] = D
            else:
                thr_max = max(t for _, t, _ in cand)
                domains = self._domains(ep, c, thr_max)
                for D, thr, x in cand:
                    if not self._lune_occupied(ep, f, x, D, thr, domains):
                        links[x] = D
        if record:
            surv["S6"] = len(links)
        return links, frozenset(G), surv

    def _stage5_blocked(self, ep: Episode, f: int, x: int, D: float, thr: float, near_q, budget: int) -> bool:
        """Cheap search for an occupier of lune(Q, x) near x; never proves a link."""
        Fe = self.layers[f].entries
        coords = self.coords
        tol = ep.tol
        cache = ep.cache
        e = Fe[x]
        spent = 0
        seen = {x}
        # direct neighbours of x, nearest first; two-hop items only through free bounds
        for dxy, y in sorted((d, y) for y, d in e.neighbors.items() if d < thr):
            seen.add(y)
            dy = cache.get(y)
            if dy is None and spent < budget and D - dxy < thr + tol and dxy - D < thr + tol:
                spent += 1
                dy = ep.dq(y, coords[y], f, "S5")
            if dy is not None and dy < thr:
                return True
            lim = thr - tol - dxy
            if lim > 0:
                for z, dyz in Fe[y].neighbors.items():
                    if dyz < lim and z != x:
                        dz = cache.get(z)
                        if dz is not None and dz < thr:
                            return True
        # items already measured from Q, nearest first
        cx = coords[x]
        for dy, y in near_q:
            if dy >= thr or spent >= budget:
                break
            if y in seen or D - dy >= thr + tol:
                continue
            spent += 1
            if ep.d(cx, coords[y], f, "S5") < thr:
                return True
        return False

    def _domains(self, ep: Episode, c: int, thr: float) -> list[tuple[int, float, PivotEntry]]:
        """Layer-``c`` pivots whose domain may reach within ``thr`` of Q."""
        radii = self.radii
        rf = radii[c + 1]
        coords = self.coords
        tol = ep.tol
        frontier: Iterable[int] = list(self.layers[0].entries)
        for k in range(c + 1):
            entries = self.layers[k].entries
            limit = thr + radii[k + 1] - rf + tol
            kept = []
            for pid in frontier:
                e = entries[pid]
                d = ep.cache.get(pid)
                if d is None:
                    d = ep.dq(pid, coords[pid], k, "S6")
                if d - e.delta_max < limit:
                    kept.append((pid, d, e))
            if k == c:
                return kept
            nxt: set[int] = set()
            for _, _, e in kept:
                nxt.update(e.children)
            frontier = nxt
        return []

    def _lune_occupied(self, ep: Episode, f: int, x: int, D: float, thr: float, domains) -> bool:
        Fe = self.layers[f].entries
        coords = self.coords
        tol = ep.tol
        lim = thr + tol
        e = Fe[x]
        cx = coords[x]
        checked = {x}
        for p, dp, pe in domains:
            dmax = pe.delta_max
            if dp - dmax >= lim:
                continue
            if p == x:
                dxp = 0.0
            else:
                dxp = e.parents.get(p)
                if dxp is None:
                    dxp = e.neighbors.get(p)
                if dxp is None:
                    if abs(D - dp) - dmax >= lim:
                        continue
                    dxp = ep.d(cx, coords[p], f, "S6")
            if dxp - dmax >= lim:
                continue
            for y, dpy in pe.children.items():
                if y in checked or abs(dp - dpy) >= lim or abs(dxp - dpy) >= lim:
                    continue
                checked.add(y)
                dy = ep.cache.get(y)
                if dy is None:
                    dy = ep.dq(y, coords[y], f, "S6")
                if dy < thr:
                    dxy = e.neighbors.get(y)
                    if dxy is None:
                        dxy = ep.d(cx, coords[y], f, "S6")
                    if dxy < thr:
                        return True
        return False

    def _lune_occupied_exhaustive(self, ep: Episode, f: int, x: int, D: float, thr: float) -> bool:
        coords = self.coords
        cx = coords[x]
        for y in self.layers[f].entries:
            if y == x:
                continue
            if ep.dq(y, coords[y], f, "S6") < thr and ep.d(cx, coords[y], f, "S6") < thr:
                return True
        return False

    # -- S7: existing links the new point breaks --------------------------

    def _invalidate(self, ep: Episode, f: int) -> list[tuple[int, int]]:
        fine = self.layers[f]
        Fe = fine.entries
        coords = self.coords
        rf = fine.radius
        tol = ep.tol
        removed = []
        if "S7" in self.config.disabled:
            for x, e in Fe.items():
                for y, dxy in e.neighbors.items():
                    if x < y:
                        t = dxy - 3 * rf
                        if ep.dq(x, coords[x], f, "S7") < t and ep.dq(y, coords[y], f, "S7") < t:
                            removed.append((x, y))
            return removed
        c = f - 1
        frontier: Iterable[int] = list(self.layers[0].entries)
        kept: list = []
        for k in range(c + 1):
            entries = self.layers[k].entries
            j = f - k - 1
            kept = []
            for pid in frontier:
                e = entries[pid]
                bound = e.reach[j]
                if bound == NEG_INF:
                    continue
                d = ep.cache.get(pid)
                if d is None:
                    d = ep.dq(pid, coords[pid], k, "S7")
                if d < bound + tol:
                    kept.append((d, e))
            if k == c:
                break
            nxt: set[int] = set()
            for _, e in kept:
                nxt.update(e.children)
            frontier = nxt
        done = set()
        for dp, pe in kept:
            for x, dpx in pe.children.items():
                if x in done:
                    continue
                e = Fe[x]
                mu = e.bar_mu_max
                if mu == NEG_INF or dp - dpx >= mu + tol:
                    continue
                done.add(x)
                dx = ep.cache.get(x)
                if dx is None:
                    dx = ep.dq(x, coords[x], f, "S7")
                if dx >= mu + tol:
                    continue
                for y, dxy in e.neighbors.items():
                    t = dxy - 3 * rf
                    if dx < t and dxy - dx < t + tol:
                        if ep.dq(y, coords[y], f, "S7") < t:
                            removed.append((x, y) if x < y else (y, x))
        return sorted(set(removed))

    # -- mutation ----------------------------------------------------------

    def _commit(self, f: int, qid: int, q: tuple, parents: dict, links: dict, gq: frozenset, removed, report):
        layer = self.layers[f]
        Fe = layer.entries
        rf = layer.radius
        L = self.n_layers
        for x, y in removed:
            Fe[x].drop_link(y)
            Fe[y].drop_link(x)
        coarse_seen = self.layers[f - 1].next_seq if f > 0 else 0
        entry = PivotEntry(
            point_id=qid,
            radius=rf,
            seq=layer.next_seq,
            parents=dict(parents),
            neighbors=dict(links),
            coarse_nbrs=gq,
            coarse_seen=coarse_seen,
            reach=[NEG_INF] * (L - 1 - f),
        )
        layer.next_seq += 1
        Fe[qid] = entry
        raised: dict[int, float] = {}
        if f > 0:
            Ce = self.layers[f - 1].entries
            for p, d in parents.items():
                pe = Ce[p]
                pe.children[qid] = d
                if d > pe.delta_max:
                    pe.delta_max = d
        for y, d in links.items():
            m = d - 3 * rf
            ye = Fe[y]
            ye.add_link(qid, d)
            if m > ye.bar_mu_max:
                ye.bar_mu_max = m
                raised[y] = m
            if m > entry.bar_mu_max:
                entry.bar_mu_max = m
        raised[qid] = entry.bar_mu_max
        self._raise_reach(f, raised)
        if report is not None:
            report.added[f] = sorted((min(qid, y), max(qid, y)) for y in links)
            report.removed[f] = list(removed)

    def _raise_reach(self, f: int, values: dict[int, float]) -> None:
        vals = {x: v for x, v in values.items() if v != NEG_INF}
        k = f - 1
        while vals and k >= 0:
            child_entries = self.layers[k + 1].entries
            entries = self.layers[k].entries
            j = f - k - 1
            nxt: dict[int, float] = {}
            for x, v in vals.items():
                for p, d in child_entries[x].parents.items():
                    cand = v + d
                    pe = entries[p]
                    if cand > pe.reach[j]:
                        pe.reach[j] = cand
                        if cand > nxt.get(p, NEG_INF):
                            nxt[p] = cand
            vals = nxt
            k -= 1

    def recompute_bounds(self) -> None:
        """Tighten every ``bar_mu_max`` and ``reach`` bound to its exact value."""
        L = self.n_layers
        for f, layer in enumerate(self.layers):
            r = layer.radius
            for e in layer.entries.values():
                e.bar_mu_max = max((d - 3 * r for d in e.neighbors.values()), default=NEG_INF)
                e.reach = [NEG_INF] * (L - 1 - f)
        for f in range(1, L):
            vals = {x: e.bar_mu_max for x, e in self.layers[f].entries.items()}
            self._raise_reach(f, vals)


def _union_children(Ce: dict, pivots, qid: int) -> set:
    out: set[int] = set()
    for p in pivots:
        if p != qid:
            out.update(Ce[p].children)
    return out


# ----------------------------------------------------------------------
# construction


@dataclass
class BuildReport:
    order: list
    stats: StageStats
    promotions: int
    survivors: list = field(default_factory=list)


def build(
    dataset: Dataset,
    config: HierarchyConfig | None = None,
    order: Sequence[int] | None = None,
    metric: CountedMetric | None = None,
    progress=None,
) -> tuple[Hierarchy, BuildReport]:
    """Insert every point of ``dataset`` (in ``order`` if given) into a fresh hierarchy."""
    config = config or HierarchyConfig()
    pts = dataset.tuples()
    radii = config.resolve(pts, dataset.metric)
    metric = metric or CountedMetric(dataset.metric, cache=config.cache)
    h = Hierarchy(config, metric, radii=radii, dim=dataset.dim)
    if order is None:
        order = range(len(pts))
    order = list(order)
    if sorted(order) != list(range(len(pts))):
        raise ValueError("order must be a permutation of the dataset ids")
    before = metric.stats.copy()
    promotions = 0
    survivors = []
    for n, i in enumerate(order):
        rep = h.insert(pts[i], pid=i)
        promotions += len(rep.promoted_to)
        if config.record_survivors and rep.survivors:
            survivors.append(rep.survivors)
        if progress is not None:
            progress(n + 1, len(order))
    return h, BuildReport(order, metric.stats.diff(before), promotions, survivors)


# ----------------------------------------------------------------------
# audit


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(h: Hierarchy, audit_cap: int = 2000, check_edges: bool = True) -> ValidationReport:
    """Audit every structural invariant; distances are recomputed uncounted."""
    fn = h.metric.inner
    rep = ValidationReport()
    v = rep.violations
    try:
        check_radii(h.radii)
    except ValueError as exc:
        v.append(f"radii: {exc}")
    if [layer.radius for layer in h.layers] != list(h.radii):
        v.append("radii: layer radii disagree with schedule")
    coords = h.coords
    L = h.n_layers
    if set(h.bottom.entries) != set(coords):
        v.append("bottom layer does not hold exactly the inserted points")
    if len(set(coords.values())) != len(coords):
        v.append("duplicate coordinates stored")
    for l, layer in enumerate(h.layers):
        for pid, e in layer.entries.items():
            tag = f"layer {l} point {pid}"
            if e.radius != layer.radius:
                v.append(f"{tag}: radius {e.radius} != layer radius {layer.radius}")
            if l + 1 < L and pid not in h.layers[l + 1].entries:
                v.append(f"{tag}: pivot missing from the finer layer")
            if len(e.reach) != L - 1 - l:
                v.append(f"{tag}: reach has wrong length")
            # coverage and parent/child symmetry
            if l > 0:
                R = h.radii[l - 1] - layer.radius
                up = h.layers[l - 1].entries
                if not e.parents:
                    v.append(f"{tag}: no parent")
                for p, d in e.parents.items():
                    if p not in up:
                        v.append(f"{tag}: parent {p} not in layer {l - 1}")
                        continue
                    true = fn(coords[p], coords[pid])
                    if true != d:
                        v.append(f"{tag}: stored parent distance {d} != {true}")
                    if true > R:
                        v.append(f"{tag}: parent {p} at {true} does not cover (limit {R})")
                    if up[p].children.get(pid) != d:
                        v.append(f"{tag}: parent {p} does not list it as a child")
                cn = e.coarse_nbrs - {pid}
                if not cn <= set(up):
                    v.append(f"{tag}: coarse neighbours outside layer {l - 1}")
                if e.coarse_seen > h.layers[l - 1].next_seq:
                    v.append(f"{tag}: coarse_seen ahead of layer {l - 1}")
            elif e.parents:
                v.append(f"{tag}: top-layer entry with parents")
            if l + 1 < L:
                down = h.layers[l + 1].entries
                true_dmax = 0.0
                for c, d in e.children.items():
                    if c not in down:
                        v.append(f"{tag}: child {c} not in layer {l + 1}")
                        continue
                    if down[c].parents.get(pid) != d:
                        v.append(f"{tag}: child {c} does not list it as a parent")
                    true_dmax = max(true_dmax, fn(coords[pid], coords[c]))
                if e.delta_max != true_dmax:
                    v.append(f"{tag}: delta_max {e.delta_max} != {true_dmax}")
            elif e.children:
                v.append(f"{tag}: bottom entry with children")
            # adjacency
            for y, d in e.neighbors.items():
                ye = layer.entries.get(y)
                if ye is None or ye.neighbors.get(pid) != d:
                    v.append(f"{tag}: asymmetric link to {y}")
                elif pid < y and fn(coords[pid], coords[y]) != d:
                    v.append(f"{tag}: stored link length to {y} is stale")
            true_mu = max((d - 3 * layer.radius for d in e.neighbors.values()), default=NEG_INF)
            if e.bar_mu_max < true_mu:
                v.append(f"{tag}: bar_mu_max {e.bar_mu_max} below true {true_mu}")
    # reach chains against exact values
    for f in range(1, L):
        vals = {x: max((d - 3 * h.layers[f].radius for d in e.neighbors.values()), default=NEG_INF)
                for x, e in h.layers[f].entries.items()}
        k = f - 1
        while k >= 0:
            j = f - k - 1
            nxt: dict[int, float] = {}
            for pid, e in h.layers[k].entries.items():
                best = NEG_INF
                for c, d in e.children.items():
                    cv = vals.get(c, NEG_INF)
                    if cv != NEG_INF:
                        best = max(best, cv + d)
                nxt[pid] = best
                if e.reach[j] < best:
                    label = "mu_max" if j == 0 else f"reach[{j}]"
                    v.append(f"layer {k} point {pid}: {label} {e.reach[j]} below true {best}")
            vals = nxt
            k -= 1
    if check_edges:
        for l, layer in enumerate(h.layers):
            if 1 < layer.size <= audit_cap:
                ids = sorted(layer.entries)
                g = brute_grng([(coords[i], layer.radius) for i in ids], fn)
                want = {(ids[a], ids[b]) for a, b in g.edges}
                have = layer.edges()
                if want != have:
                    v.append(
                        f"layer {l}: edge set differs from brute force "
                        f"(+{len(have - want)}/-{len(want - have)})"
                    )
    return rep
