#!/usr/bin/env python3
"""Mean search distances per query as the dataset doubles (uniform data, tuned layers).

    python3 scripts/search_scaling.py --start 1600 --doublings 6 --queries 200 --out scaling.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from grng.bench import make_config, run_build, run_search
from grng.datagen import GenSpec, generate


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--start", type=int, default=1600)
    ap.add_argument("--doublings", type=int, default=6)
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--oracle", action="store_true", help="check search results (small N only)")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)

    rows = []
    prev = None
    qs = np.random.default_rng(args.seed + 1).uniform(-1, 1, (args.queries, args.dim))
    for k in range(args.doublings + 1):
        n = args.start * 2**k
        ds = generate(GenSpec("uniform-cube", n=n, dim=args.dim, seed=args.seed))
        h, brep = run_build(ds, make_config(ds, pivots="auto"))
        _, srep = run_search(h, qs, oracle=args.oracle)
        ratio = srep.search_mean / prev if prev else None
        prev = srep.search_mean
        row = {
            "n": n,
            "layer_sizes": " ".join(map(str, h.layer_sizes())),
            "construction_per_point": brep.construction_distances / n,
            "search_mean": srep.search_mean,
            "search_p90": srep.search_p90,
            "ratio_to_previous": ratio,
            "build_seconds": brep.build_seconds,
        }
        rows.append(row)
        print(" ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()),
              file=sys.stderr, flush=True)
    handle = args.out.open("w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(handle, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        handle.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
