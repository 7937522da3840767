"""Datasets, metrics and instrumented distance evaluation."""

from __future__ import annotations

import math
import random
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

Coords = tuple  # tuple[float, ...]
MetricFn = Callable[[Sequence[float], Sequence[float]], float]

STAGES = ("S1", "S2", "S3", "S4", "S5", "S6", "S7", "oracle", "parent-scan")


class RejectedInputError(ValueError):
    """Input rejected before it reaches an index or an oracle."""


class DimensionMismatchError(RejectedInputError):
    pass


class DuplicatePointError(RejectedInputError):
    def __init__(self, message: str, duplicates: list[tuple[int, int]] | None = None):
        super().__init__(message)
        self.duplicates = duplicates or []


# --------------------------------------------------------------------------
# metrics


def l2(a: Sequence[float], b: Sequence[float]) -> float:
    return math.dist(a, b)


def l1(a: Sequence[float], b: Sequence[float]) -> float:
    return math.fsum(abs(x - y) for x, y in zip(a, b))


METRICS: dict[str, MetricFn] = {"l2": l2, "l1": l1}


def get_metric(name: str) -> MetricFn:
    try:
        return METRICS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None


def metric_name(fn: MetricFn) -> str:
    for name, f in METRICS.items():
        if f is fn:
            return name
    return getattr(fn, "__name__", "custom")


def pairwise(points: Sequence[Sequence[float]], metric: MetricFn) -> np.ndarray:
    """Full distance matrix, evaluated with the scalar metric so that every
    entry is bit-identical to what the index computes for the same pair."""
    n = len(points)
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        a = points[i]
        row = [metric(a, points[j]) for j in range(i + 1, n)]
        out[i, i + 1:] = row
        out[i + 1:, i] = row
    return out


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class DataPoint:
    id: int
    coords: Coords

    @property
    def dim(self) -> int:
        return len(self.coords)


@dataclass
class Dataset:
    """Points with dense ids ``0..N-1``; row ``i`` of ``coords`` is point ``i``."""

    coords: np.ndarray
    metric: str = "l2"
    dedup_report: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 1)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"expected a 2-D array of points, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise DimensionMismatchError("points need dimension >= 1")
        if not np.all(np.isfinite(arr)):
            raise RejectedInputError("coordinates must be finite")
        self.coords = arr
        get_metric(self.metric)
        dups = find_duplicates(arr)
        if dups:
            raise DuplicatePointError(
                f"{len(dups)} duplicate point(s), first: row {dups[0][0]} repeats row {dups[0][1]}",
                dups,
            )

    @classmethod
    def from_array(cls, coords, metric: str = "l2", dedup: bool = True) -> "Dataset":
        """Build a dataset, dropping repeated rows (first occurrence kept) when
        ``dedup`` is set; the dropped rows are listed in ``dedup_report``."""
        arr = np.asarray(coords, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
        report: list[tuple[int, int]] = []
        if dedup and len(arr):
            report = find_duplicates(arr)
            if report:
                drop = {i for i, _ in report}
                keep = [i for i in range(len(arr)) if i not in drop]
                arr = arr[keep]
        ds = cls(arr, metric=metric)
        ds.dedup_report = report
        return ds

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def metric_fn(self) -> MetricFn:
        return get_metric(self.metric)

    def point(self, i: int) -> DataPoint:
        return DataPoint(i, tuple(float(v) for v in self.coords[i]))

    def points(self) -> list[DataPoint]:
        return [DataPoint(i, tuple(row)) for i, row in enumerate(self.coords.tolist())]

    def tuples(self) -> list[Coords]:
        return [tuple(row) for row in self.coords.tolist()]

    def subset(self, ids: Iterable[int]) -> "Dataset":
        return Dataset(self.coords[list(ids)], metric=self.metric)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.metric == other.metric
            and self.coords.shape == other.coords.shape
            and bool(np.array_equal(self.coords, other.coords))
        )


def find_duplicates(coords: np.ndarray) -> list[tuple[int, int]]:
    """Return ``(dup_row, first_row)`` for every row repeating an earlier one."""
    seen: dict[tuple, int] = {}
    dups = []
    for i, row in enumerate(map(tuple, np.asarray(coords).tolist())):
        j = seen.setdefault(row, i)
        if j != i:
            dups.append((i, j))
    return dups


# --------------------------------------------------------------------------
# instrumentation


class StageStats:
    """Counts of metric evaluations keyed by ``(layer, stage)``.

    Layer ``-1`` is used for evaluations that do not belong to a layer.
    Merges are locked so parallel episodes never lose updates.
    """

    def __init__(self):
        self.table: Counter = Counter()
        self._lock = threading.Lock()

    def add(self, layer: int, stage: str, n: int = 1) -> None:
        with self._lock:
            self.table[(layer, stage)] += n

    def merge(self, table) -> None:
        with self._lock:
            self.table.update(table)

    def total(self) -> int:
        return sum(self.table.values())

    def by_stage(self) -> dict[str, int]:
        out: Counter = Counter()
        for (_, stage), n in self.table.items():
            out[stage] += n
        return dict(out)

    def by_layer(self) -> dict[int, int]:
        out: Counter = Counter()
        for (layer, _), n in self.table.items():
            out[layer] += n
        return dict(out)

    def copy(self) -> "StageStats":
        s = StageStats()
        s.table = Counter(self.table)
        return s

    def diff(self, before: "StageStats") -> "StageStats":
        s = StageStats()
        s.table = Counter({k: v - before.table.get(k, 0) for k, v in self.table.items()})
        s.table = +s.table
        return s

    def to_dict(self) -> dict[str, int]:
        return {f"{layer}:{stage}": n for (layer, stage), n in sorted(self.table.items())}

    @classmethod
    def from_dict(cls, d: dict[str, int]) -> "StageStats":
        s = cls()
        for key, n in d.items():
            layer, stage = key.split(":", 1)
            s.table[(int(layer), stage)] = n
        return s

    def __repr__(self) -> str:
        return f"StageStats(total={self.total()}, {self.by_stage()})"


class Episode:
    """One insert or search: memoises distances to the episode's query point
    and tallies evaluations locally until :meth:`close`."""

    __slots__ = ("fn", "q", "cache", "counts", "calls", "use_cache", "_owner", "tol")

    def __init__(self, owner: "CountedMetric", q: Coords, use_cache: bool = True):
        self._owner = owner
        self.fn = owner.inner
        self.q = q
        self.cache: dict[int, float] = {}
        self.counts: Counter = Counter()
        self.calls = 0
        self.use_cache = use_cache
        self.tol = 0.0  # slack callers may attach to pruning bounds

    def dq(self, pid: int, coords: Coords, layer: int, stage: str) -> float:
        """Distance from the query to stored point ``pid``."""
        v = self.cache.get(pid)
        if v is None:
            v = self.fn(self.q, coords)
            self.calls += 1
            self.counts[(layer, stage)] += 1
            if self.use_cache:
                self.cache[pid] = v
        return v

    def d(self, a: Coords, b: Coords, layer: int, stage: str) -> float:
        """Uncached distance between two stored points."""
        self.calls += 1
        self.counts[(layer, stage)] += 1
        return self.fn(a, b)

    def close(self) -> StageStats:
        s = StageStats()
        s.table = Counter(self.counts)
        self._owner._absorb(self)
        self.cache.clear()
        return s

    def __enter__(self) -> "Episode":
        return self

    def __exit__(self, *exc) -> None:
        if self._owner is not None:
            self.close()
            self._owner = None


class CountedMetric:
    """Wraps a metric; every inner evaluation lands in exactly one
    ``(layer, stage)`` cell of :attr:`stats`.

    ``evaluations`` is a shadow counter maintained independently of the
    table so conservation can be asserted.
    """

    def __init__(self, inner: MetricFn | str = "l2", cache: bool = True):
        self.inner: MetricFn = get_metric(inner) if isinstance(inner, str) else inner
        self.cache = cache
        self.stats = StageStats()
        self.evaluations = 0
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return metric_name(self.inner)

    def episode(self, q: Coords) -> Episode:
        return Episode(self, q, use_cache=self.cache)

    def _absorb(self, ep: Episode) -> None:
        self.stats.merge(ep.counts)
        with self._lock:
            self.evaluations += ep.calls

    def distance(self, a: DataPoint, b: DataPoint, tag: str = "oracle", layer: int = -1) -> float:
        """Single counted evaluation outside any episode."""
        if len(a.coords) != len(b.coords):
            raise DimensionMismatchError(
                f"dimension mismatch: {len(a.coords)} vs {len(b.coords)}"
            )
        v = self.inner(a.coords, b.coords)
        self.stats.add(layer, tag)
        with self._lock:
            self.evaluations += 1
        return v


# --------------------------------------------------------------------------
# axioms


@dataclass
class AxiomReport:
    samples: int
    violations: list[tuple[str, tuple[int, ...], float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_metric_axioms(
    metric: MetricFn,
    dataset: Dataset | Sequence[Sequence[float]],
    samples: int = 1000,
    seed: int = 0,
    rtol: float = 1e-12,
) -> AxiomReport:
    """Check identity, symmetry and the triangle inequality on sampled tuples.

    Triangle checks allow ``rtol`` relative slack for float rounding; the
    other two are exact.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = dataset.tuples() if isinstance(dataset, Dataset) else [tuple(p) for p in dataset]
    n = len(pts)
    report = AxiomReport(samples)
    if n == 0:
        return report
    rng = random.Random(seed)
    for _ in range(samples):
        i, j, k = rng.randrange(n), rng.randrange(n), rng.randrange(n)
        x, y, z = pts[i], pts[j], pts[k]
        dxx = metric(x, x)
        if dxx != 0:
            report.violations.append(("identity", (i, i), dxx))
        dxy, dyx = metric(x, y), metric(y, x)
        if dxy != dyx:
            report.violations.append(("symmetry", (i, j), dxy - dyx))
        if i != j and x != y and dxy <= 0:
            report.violations.append(("identity", (i, j), dxy))
        dxz, dyz = metric(x, z), metric(y, z)
        if dxz > dxy + dyz + rtol * (abs(dxy) + abs(dyz) + abs(dxz)):
            report.violations.append(("triangle", (i, j, k), dxz - dxy - dyz))
    return report
