#!/usr/bin/env python3
"""Construction cost of a two-layer hierarchy as the pivot count varies.

Writes one CSV row per (pivot count, dimension) with per-stage distance totals,
so the optimum for a given N and d can be read off directly.

    python3 scripts/pivot_sweep.py --n 10000 --dims 2,4 --pivots 50,100,200,400,800 --out sweep.csv
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from grng.bench import reports_to_csv, run_sweep
from grng.datagen import GenSpec, generate


def ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--dims", type=ints, default=[2])
    ap.add_argument("--pivots", type=ints, default=[50, 100, 200, 400, 800])
    ap.add_argument("--kind", default="uniform-cube", choices=("uniform-cube", "gaussian-clusters"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--oracle", action="store_true", help="also compare each build to brute force")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)

    reports = []
    for d in args.dims:
        spec = GenSpec(args.kind, n=args.n, dim=d, seed=args.seed)
        ds = generate(spec)
        grid = [{"pivots": [m], "seed": args.seed} for m in args.pivots]
        batch = run_sweep(ds, grid, spec.describe(), oracle=args.oracle)
        for m, rep in zip(args.pivots, batch):
            print(f"d={d} pivots={m:5d} construction={rep.construction_distances:>10d} "
                  f"per_point={rep.construction_distances / args.n:8.1f}", file=sys.stderr)
        reports += batch
    text = reports_to_csv(reports)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if all(r.ok for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
