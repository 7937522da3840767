"""Experiment runners behind the command line: build, search, sweep, graphs."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .datagen import GenSpec, generate, load
from .hierarchy import (
    Hierarchy,
    HierarchyConfig,
    build,
    calibrate_radii,
    geometric_counts,
    validate,
)
from .metric import STAGES, CountedMetric, Dataset, DuplicatePointError, StageStats
from .oracles import (
    DEFAULT_ORACLE_CAP,
    OracleCapExceeded,
    UndirectedGraph,
    brute_gg,
    brute_knn,
    brute_mst,
    brute_rng,
    knn_graph,
    rng_neighbors_of_query,
)

SURVIVOR_STAGES = ("S1", "S2", "S3", "S4", "S5", "S6")


# --------------------------------------------------------------------------
# dataset sources


def parse_source(source: str, metric: str = "l2", format: str | None = None) -> tuple[Dataset, dict]:
    """``gen:KIND,n=..,dim=..,seed=..`` or a file path."""
    if source.startswith("gen:"):
        body = source[4:]
        parts = [p for p in body.split(",") if p]
        kw: dict = {"kind": parts[0]} if parts and "=" not in parts[0] else {}
        for p in parts[1 if kw else 0:]:
            k, v = p.split("=", 1)
            k = k.strip()
            kw[k] = float(v) if k in ("spread", "outliers") else int(v)
        spec = GenSpec(**kw)
        ds = generate(spec)
        ds.metric = metric
        return ds, {"source": "generated", **spec.describe()}
    ds = load(source, format=format, metric=metric)
    return ds, {"source": source, "n": len(ds), "dim": ds.dim, "dropped_duplicates": len(ds.dedup_report)}


# --------------------------------------------------------------------------
# schedules


def tuned_layers(n: int, top: int = 10, fanout: float = 5.0) -> int:
    """Layer count with about ``fanout`` times more pivots per finer layer."""
    if n <= top:
        return 2
    return 1 + max(1, round(math.log(n / top) / math.log(fanout)))


def make_config(
    dataset: Dataset,
    layers: int | None = None,
    radii: Sequence[float] | None = None,
    pivots: Sequence[int] | str | None = None,
    top_radius: float | None = None,
    decay: float = 0.25,
    k_budget: int = 25,
    seed: int = 0,
    disabled: Sequence[str] = (),
    record_survivors: bool = False,
) -> HierarchyConfig:
    """Resolve one of the three schedule styles into a config with explicit radii.

    ``radii`` is used as given; ``pivots`` (counts per non-bottom layer, or
    ``"auto"``) is calibrated on the dataset; otherwise the geometric rule
    ``top_radius * decay**l`` applies.
    """
    common = dict(k_budget=k_budget, seed=seed, disabled=frozenset(disabled), record_survivors=record_survivors)
    if radii is not None:
        return HierarchyConfig(radii=list(radii), **common)
    pts = dataset.tuples()
    if pivots is not None:
        if pivots == "auto":
            L = layers or tuned_layers(len(pts))
            counts = geometric_counts(len(pts), L, 10)
        else:
            counts = [int(m) for m in pivots]
        counts = [m for m in counts if m < len(pts)] or ([1] if len(pts) > 1 else [])
        if len(pts) < 2:
            return HierarchyConfig(layers=max(2, len(counts) + 1), top_radius=1.0, **common)
        return HierarchyConfig(radii=calibrate_radii(dataset.coords, counts, dataset.metric), **common)
    cfg = HierarchyConfig(layers=layers or 2, top_radius=top_radius, decay=decay, **common)
    return HierarchyConfig(radii=cfg.resolve(pts, dataset.metric), **common)


# --------------------------------------------------------------------------
# reports


@dataclass
class BenchReport:
    command: str
    dataset: dict
    config: dict = field(default_factory=dict)
    layer_sizes: list = field(default_factory=list)
    n_points: int = 0
    n_edges: int = 0
    average_degree: float = 0.0
    construction_distances: int = 0
    queries: int = 0
    skipped_duplicates: int = 0
    search_mean: float | None = None
    search_p50: float | None = None
    search_p90: float | None = None
    search_max: int | None = None
    stats: dict = field(default_factory=dict)
    by_stage: dict = field(default_factory=dict)
    survivors_mean: dict = field(default_factory=dict)
    oracle: bool = False
    oracle_ok: bool | None = None
    extra: int | None = None
    missing: int | None = None
    oracle_failures: int | None = None
    diff_sample: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    evaluations: int = 0
    counters_reconcile: bool = True
    build_seconds: float | None = None
    search_seconds: float | None = None

    @property
    def ok(self) -> bool:
        return (self.oracle_ok is not False) and self.counters_reconcile and not self.violations

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def scalars(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, (dict, list)):
                if k == "config":
                    out["radii"] = " ".join(repr(r) for r in (v.get("radii") or []))
                    out["k_budget"] = v.get("k_budget")
                elif k == "layer_sizes":
                    out[k] = " ".join(map(str, v))
                elif k == "by_stage":
                    for s in STAGES:
                        out[f"stage_{s}"] = v.get(s, 0)
                continue
            out[k] = v
        return out


def reports_to_csv(reports: Sequence[BenchReport]) -> str:
    rows = [r.scalars() for r in reports]
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in keys})
    return buf.getvalue()


def _survivor_means(records: list[dict]) -> dict:
    # records: one {layer: {stage: count}} per episode; report the bottom layer
    sums: dict[str, float] = {}
    n = 0
    for rec in records:
        if not rec:
            continue
        bottom = rec[max(rec)]
        n += 1
        for s, c in bottom.items():
            sums[s] = sums.get(s, 0.0) + c
    return {s: v / n for s, v in sums.items()} if n else {}


# --------------------------------------------------------------------------
# commands


def run_build(
    dataset: Dataset,
    config: HierarchyConfig,
    descriptor: dict | None = None,
    oracle: bool = False,
    oracle_cap: int = DEFAULT_ORACLE_CAP,
    order: Sequence[int] | None = None,
    audit: bool = False,
) -> tuple[Hierarchy, BenchReport]:
    metric = CountedMetric(dataset.metric, cache=config.cache)
    t0 = time.perf_counter()
    h, brep = build(dataset, config, order=order, metric=metric)
    elapsed = time.perf_counter() - t0
    g = h.rng_graph() if len(h) else UndirectedGraph(0)
    rep = BenchReport(
        command="build",
        dataset=descriptor or {"n": len(dataset), "dim": dataset.dim},
        config={**config.to_dict(), "radii": list(h.radii)},
        layer_sizes=h.layer_sizes(),
        n_points=len(h),
        n_edges=len(g.edges),
        average_degree=g.average_degree if len(h) else 0.0,
        construction_distances=brep.stats.total(),
        stats=brep.stats.to_dict(),
        by_stage=brep.stats.by_stage(),
        survivors_mean=_survivor_means(brep.survivors),
        evaluations=metric.evaluations,
        build_seconds=elapsed,
    )
    rep.counters_reconcile = metric.stats.total() == metric.evaluations == brep.stats.total()
    if audit:
        rep.violations = validate(h, audit_cap=oracle_cap).violations
    if oracle:
        rep.oracle = True
        if len(dataset) > oracle_cap:
            raise OracleCapExceeded(f"N={len(dataset)} exceeds the oracle cap of {oracle_cap}")
        truth = brute_rng(dataset)
        extra, missing = g.diff(truth) if len(h) else (set(), set())
        rep.extra, rep.missing = len(extra), len(missing)
        rep.oracle_ok = not extra and not missing
        rep.diff_sample = [["+", *e] for e in sorted(extra)[:5]] + [["-", *e] for e in sorted(missing)[:5]]
    return h, rep


def run_search(
    h: Hierarchy,
    queries: np.ndarray,
    descriptor: dict | None = None,
    oracle: bool = False,
    oracle_cap: int = DEFAULT_ORACLE_CAP,
    workers: int = 1,
) -> tuple[list, BenchReport]:
    """Search every query; duplicates of indexed points are skipped and counted."""
    qs = [tuple(float(v) for v in q) for q in np.asarray(queries, dtype=np.float64)]
    before = h.metric.stats.copy()
    ev0 = h.metric.evaluations

    def one(q):
        try:
            return h.search(q)
        except DuplicatePointError:
            return None

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, qs))
    else:
        results = [one(q) for q in qs]
    elapsed = time.perf_counter() - t0
    done = [(q, r) for q, r in zip(qs, results) if r is not None]
    counts = np.array([r.stats.total() for _, r in done], dtype=float)
    total = h.metric.stats.diff(before)
    rep = BenchReport(
        command="search",
        dataset=descriptor or {},
        config={**h.config.to_dict(), "radii": list(h.radii)},
        layer_sizes=h.layer_sizes(),
        n_points=len(h),
        queries=len(done),
        skipped_duplicates=len(qs) - len(done),
        search_mean=float(counts.mean()) if len(counts) else None,
        search_p50=float(np.percentile(counts, 50)) if len(counts) else None,
        search_p90=float(np.percentile(counts, 90)) if len(counts) else None,
        search_max=int(counts.max()) if len(counts) else None,
        stats=total.to_dict(),
        by_stage=total.by_stage(),
        survivors_mean=_survivor_means([r.survivors for _, r in done]),
        evaluations=h.metric.evaluations - ev0,
        search_seconds=elapsed,
    )
    rep.counters_reconcile = total.total() == rep.evaluations == int(counts.sum())
    if oracle:
        rep.oracle = True
        if len(h) > oracle_cap:
            raise OracleCapExceeded(f"N={len(h)} exceeds the oracle cap of {oracle_cap}")
        ids = sorted(h.coords)
        pts = [h.coords[i] for i in ids]
        fails = 0
        for q, r in done:
            want = {ids[j] for j in rng_neighbors_of_query(pts, q, h.metric.inner)}
            if want != r.neighbors:
                fails += 1
                if len(rep.diff_sample) < 5:
                    rep.diff_sample.append({"query": list(q), "extra": sorted(r.neighbors - want), "missing": sorted(want - r.neighbors)})
        rep.oracle_failures = fails
        rep.oracle_ok = fails == 0
    return [(q, r) for q, r in zip(qs, results)], rep


def run_sweep(dataset: Dataset, grid: Sequence[dict], descriptor: dict | None = None, oracle: bool = False,
              oracle_cap: int = DEFAULT_ORACLE_CAP) -> list[BenchReport]:
    """One build per grid point; each point is a dict of :func:`make_config` keywords."""
    out = []
    for point in grid:
        cfg = make_config(dataset, **point)
        _, rep = run_build(dataset, cfg, {**(descriptor or {}), "sweep": point}, oracle=oracle, oracle_cap=oracle_cap)
        rep.command = "sweep"
        out.append(rep)
    return out


@dataclass
class GraphBundle:
    graphs: dict
    degrees: dict

    def summary(self) -> dict:
        return {
            name: {
                "edges": len(g.edges),
                "average_degree": g.average_degree,
                "connected": g.is_connected(),
                "degree_histogram": {str(k): v for k, v in g.degree_histogram().items()},
            }
            for name, g in self.graphs.items()
        }


def run_graphs(dataset: Dataset, k: int = 1, cap: int = DEFAULT_ORACLE_CAP) -> GraphBundle:
    n = len(dataset)
    if n > cap:
        raise OracleCapExceeded(f"N={n} exceeds the oracle cap of {cap}")
    graphs = {
        "mst": brute_mst(dataset),
        "rng": brute_rng(dataset),
        "gg": brute_gg(dataset),
    }
    if n > k:
        graphs["knn"] = knn_graph(brute_knn(dataset, k))
    ordered = {name: graphs[name] for name in ("knn", "mst", "rng", "gg") if name in graphs}
    return GraphBundle(ordered, {name: g.average_degree for name, g in ordered.items()})


def merge_stats(reports: Sequence[BenchReport]) -> StageStats:
    s = StageStats()
    for r in reports:
        s.merge(StageStats.from_dict(r.stats).table)
    return s
