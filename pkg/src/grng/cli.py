"""``grng`` command line: gen, build, search, sweep, graphs, verify.

Exit status is 0 only when every enabled oracle check passes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import snapshot
from .bench import (
    BenchReport,
    make_config,
    parse_source,
    reports_to_csv,
    run_build,
    run_graphs,
    run_search,
    run_sweep,
)
from .datagen import GenSpec, generate, save
from .hierarchy import validate
from .metric import RejectedInputError, get_metric, verify_metric_axioms
from .oracles import DEFAULT_ORACLE_CAP, OracleCapExceeded

EXIT_OK, EXIT_ORACLE, EXIT_INPUT = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _pivots(text: str):
    return "auto" if text == "auto" else [int(v) for v in text.split(",") if v.strip()]


def _add_source(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--dataset", required=required,
                   help="file path (.fvecs/.csv, optionally .gz) or gen:KIND,n=..,dim=..,seed=..")
    p.add_argument("--format", choices=("fvecs", "csv"), help="file format (inferred from suffix)")
    p.add_argument("--metric", default="l2", choices=("l2", "l1"))


def _add_schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, help="layer count for geometric or auto schedules")
    p.add_argument("--radii", type=_floats, help="explicit radii, coarse to fine, last must be 0")
    p.add_argument("--pivots", type=_pivots,
                   help="pivot counts per non-bottom layer (coarse to fine), or 'auto'")
    p.add_argument("--top-radius", type=float)
    p.add_argument("--decay", type=float, default=0.25)
    p.add_argument("--kbudget", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--disable", default="", help="comma list of pruning stages to switch off (S1..S7)")


def _add_outputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle", action="store_true", help="compare against brute force")
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP)
    p.add_argument("--stats-json", type=Path)
    p.add_argument("--stats-csv", type=Path)


def _config(args, ds):
    return make_config(
        ds,
        layers=args.layers,
        radii=args.radii,
        pivots=args.pivots,
        top_radius=args.top_radius,
        decay=args.decay,
        k_budget=args.kbudget,
        seed=args.seed,
        disabled=[s for s in args.disable.split(",") if s],
    )


def _emit(reports: list[BenchReport], args) -> None:
    if getattr(args, "stats_json", None):
        payload = reports[0] if len(reports) == 1 else None
        text = payload.to_json() if payload else json.dumps([json.loads(r.to_json()) for r in reports], indent=2)
        args.stats_json.write_text(text + "\n")
    if getattr(args, "stats_csv", None):
        args.stats_csv.write_text(reports_to_csv(reports))


def _status(reports: list[BenchReport]) -> int:
    return EXIT_OK if all(r.ok for r in reports) else EXIT_ORACLE


def _summary(rep: BenchReport) -> str:
    bits = [f"{rep.command}: N={rep.n_points}", f"layers={rep.layer_sizes}"]
    if rep.command in ("build", "sweep"):
        bits.append(f"construction={rep.construction_distances}")
        bits.append(f"avg_degree={rep.average_degree:.4f}")
    if rep.search_mean is not None:
        bits.append(f"queries={rep.queries} mean={rep.search_mean:.2f}")
    if rep.oracle:
        if rep.extra is not None:
            bits.append(f"extra={rep.extra} missing={rep.missing}")
        if rep.oracle_failures is not None:
            bits.append(f"oracle_failures={rep.oracle_failures}")
        bits.append("ORACLE OK" if rep.oracle_ok else "ORACLE MISMATCH")
    if rep.violations:
        bits.append(f"violations={len(rep.violations)}")
    if not rep.counters_reconcile:
        bits.append("COUNTERS DO NOT RECONCILE")
    return " ".join(bits)


# --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = GenSpec(kind=args.kind, n=args.n, dim=args.dim, clusters=args.clusters,
                   spread=args.spread, outliers=args.outliers, seed=args.seed)
    ds = generate(spec)
    save(ds, args.out, format=args.format, allow_lossy=True)
    print(f"wrote {len(ds)} points (d={ds.dim}) to {args.out}")
    return EXIT_OK


def cmd_build(args) -> int:
    ds, desc = parse_source(args.dataset, args.metric, args.format)
    cfg = _config(args, ds)
    order = None
    if args.shuffle:
        order = [int(i) for i in np.random.default_rng(args.seed).permutation(len(ds))]
    h, rep = run_build(ds, cfg, desc, oracle=args.oracle, oracle_cap=args.oracle_cap, order=order, audit=args.audit)
    if args.out:
        snapshot.save(h, args.out)
    if args.edges:
        args.edges.write_text(h.rng_graph().to_edge_list())
    _emit([rep], args)
    print(_summary(rep))
    for d in rep.diff_sample:
        print("  diff", d)
    for v in rep.violations[:10]:
        print("  violation", v)
    return _status([rep])


def cmd_search(args) -> int:
    h = snapshot.load(args.snapshot, check=not args.no_check)
    qs, _ = parse_source(args.queries, args.metric, args.format)
    results, rep = run_search(h, qs.coords, {"snapshot": str(args.snapshot), "queries": args.queries},
                              oracle=args.oracle, oracle_cap=args.oracle_cap, workers=args.workers)
    if args.out:
        rows = []
        for q, r in results:
            if r is None:
                rows.append({"query": list(q), "duplicate": True})
            else:
                rows.append({"query": list(q), "neighbors": sorted(r.neighbors), "distances": r.stats.total()})
        args.out.write_text(json.dumps(rows) + "\n")
    _emit([rep], args)
    print(_summary(rep))
    if rep.skipped_duplicates:
        print(f"  skipped {rep.skipped_duplicates} duplicate quer{'y' if rep.skipped_duplicates == 1 else 'ies'}")
    for d in rep.diff_sample:
        print("  diff", d)
    return _status([rep])


def cmd_sweep(args) -> int:
    ds, desc = parse_source(args.dataset, args.metric, args.format)
    grid = []
    common = dict(k_budget=args.kbudget, seed=args.seed)
    for m in args.pivot_grid or []:
        grid.append({"pivots": [m], **common})
    for L in args.layer_grid or []:
        grid.append({"pivots": "auto", "layers": L, **common})
    if not grid:
        grid.append({"layers": args.layers, "radii": args.radii, "pivots": args.pivots,
                     "top_radius": args.top_radius, "decay": args.decay, **common})
    reports = run_sweep(ds, grid, desc, oracle=args.oracle, oracle_cap=args.oracle_cap)
    text = reports_to_csv(reports)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    _emit(reports, args)
    return _status(reports)


def cmd_graphs(args) -> int:
    ds, _ = parse_source(args.dataset, args.metric, args.format)
    bundle = run_graphs(ds, k=args.k, cap=args.oracle_cap)
    out = args.out
    if out:
        out.mkdir(parents=True, exist_ok=True)
        for name, g in bundle.graphs.items():
            (out / f"{name}.txt").write_text(g.to_edge_list())
        (out / "degrees.json").write_text(json.dumps(bundle.summary(), indent=2) + "\n")
    for name, info in bundle.summary().items():
        print(f"{name}: edges={info['edges']} avg_degree={info['average_degree']:.4f} connected={info['connected']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    failures = []
    if args.snapshot:
        h = snapshot.load(args.snapshot, check=False)
        rep = validate(h, audit_cap=args.oracle_cap)
        print(f"snapshot: {len(h)} points, {len(rep.violations)} violation(s)")
        failures += rep.violations
    if args.dataset:
        ds, desc = parse_source(args.dataset, args.metric, args.format)
        ax = verify_metric_axioms(get_metric(args.metric), ds, samples=args.samples, seed=args.seed)
        print(f"metric axioms: {ax.samples} samples, {len(ax.violations)} violation(s)")
        failures += [str(v) for v in ax.violations]
        cfg = _config(args, ds)
        h, rep = run_build(ds, cfg, desc, oracle=True, oracle_cap=args.oracle_cap, audit=True)
        print(_summary(rep))
        if not rep.ok:
            failures.append("build disagrees with the oracle or fails the audit")
        _emit([rep], args)
    for f in failures[:10]:
        print("  FAIL", f)
    return EXIT_OK if not failures else EXIT_ORACLE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grng", description="Exact RNG construction and search over a GRNG hierarchy")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", default="uniform-cube", choices=("uniform-cube", "gaussian-clusters"))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--spread", type=float, default=0.04)
    p.add_argument("--outliers", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("fvecs", "csv"))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a hierarchy and report construction costs")
    _add_source(p)
    _add_schedule(p)
    _add_outputs(p)
    p.add_argument("--shuffle", action="store_true", help="insert in a seeded random order")
    p.add_argument("--audit", action="store_true", help="run the invariant audit after building")
    p.add_argument("--out", type=Path, help="snapshot path (.json or .json.gz)")
    p.add_argument("--edges", type=Path, help="write the RNG edge list here")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", help="RNG-neighbour search against a snapshot")
    p.add_argument("--snapshot", type=Path, required=True)
    p.add_argument("--queries", required=True, help="query file or gen: spec")
    p.add_argument("--format", choices=("fvecs", "csv"))
    p.add_argument("--metric", default="l2", choices=("l2", "l1"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-check", action="store_true", help="skip snapshot validation on load")
    p.add_argument("--out", type=Path, help="per-query neighbour sets as JSON")
    _add_outputs(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="grid over pivot counts or layer counts")
    _add_source(p)
    _add_schedule(p)
    _add_outputs(p)
    p.add_argument("--pivot-grid", type=lambda s: [int(v) for v in s.split(",")], help="2-layer pivot counts")
    p.add_argument("--layer-grid", type=lambda s: [int(v) for v in s.split(",")], help="layer counts (auto pivots)")
    p.add_argument("--out", type=Path, help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("graphs", help="brute-force kNN/MST/RNG/GG edge lists and degree statistics")
    _add_source(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP)
    p.add_argument("--out", type=Path, help="output directory")
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("verify", help="audit a snapshot and/or check a dataset end to end")
    _add_source(p, required=False)
    _add_schedule(p)
    p.add_argument("--snapshot", type=Path)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP)
    p.add_argument("--stats-json", type=Path)
    p.add_argument("--stats-csv", type=Path)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify" and not (args.snapshot or args.dataset):
        print("verify needs --snapshot and/or --dataset", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (OracleCapExceeded, RejectedInputError, snapshot.SnapshotError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
