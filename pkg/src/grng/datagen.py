"""Synthetic point clouds and fvecs/CSV ingestion."""

from __future__ import annotations

import csv
import gzip
import io
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .metric import Dataset, RejectedInputError, find_duplicates

KINDS = ("uniform-cube", "gaussian-clusters")
FORMATS = ("fvecs", "csv")


class ParseError(RejectedInputError):
    pass


@dataclass(frozen=True)
class GenSpec:
    kind: str = "uniform-cube"
    n: int = 1000
    dim: int = 2
    clusters: int = 10
    spread: float = 0.04  # gaussian sigma; 2% of the [-1, 1] side
    outliers: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if not (np.isfinite(self.spread) and self.spread > 0):
            raise ValueError("spread must be finite and positive")
        if not 0 <= self.outliers <= 1:
            raise ValueError("outliers must be a fraction in [0, 1]")

    def describe(self) -> dict:
        return asdict(self)


def _redraw_duplicates(X: np.ndarray, draw) -> np.ndarray:
    dups = find_duplicates(X)
    while dups:
        rows = [i for i, _ in dups]
        X[rows] = draw(len(rows))
        dups = find_duplicates(X)
    return X


def generate(spec: GenSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.dim
    if n == 0:
        return Dataset(np.zeros((0, d)))
    if spec.kind == "uniform-cube":
        X = rng.uniform(-1.0, 1.0, (n, d))
        X = _redraw_duplicates(X, lambda m: rng.uniform(-1.0, 1.0, (m, d)))
        return Dataset(X)

    centers = rng.uniform(-1.0, 1.0, (spec.clusters, d))
    centers = _redraw_duplicates(centers, lambda m: rng.uniform(-1.0, 1.0, (m, d)))
    n_out = int(round(spec.outliers * n))
    n_in = n - n_out
    label = rng.integers(0, spec.clusters, n_in)
    inliers = centers[label] + rng.normal(0.0, spec.spread, (n_in, d))
    outliers = rng.uniform(-1.0, 1.0, (n_out, d))
    X = np.vstack([inliers, outliers])[rng.permutation(n)]

    def redraw(m):
        return centers[rng.integers(0, spec.clusters, m)] + rng.normal(0.0, spec.spread, (m, d))

    return Dataset(_redraw_duplicates(X, redraw))


# --------------------------------------------------------------------------
# files


def infer_format(path: str | os.PathLike) -> str:
    name = str(path).lower()
    if name.endswith(".gz"):
        name = name[:-3]
    for fmt in FORMATS:
        if name.endswith("." + fmt):
            return fmt
    raise ValueError(f"cannot infer format of {path}; pass format explicitly")


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _write_bytes(path, data: bytes) -> None:
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def parse_fvecs(raw: bytes) -> np.ndarray:
    if not raw:
        return np.zeros((0, 1), dtype=np.float64)
    if len(raw) < 4:
        raise ParseError(f"truncated header at byte 0 (record 0): {len(raw)} bytes")
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d < 1:
        raise ParseError(f"record 0 at byte 0: invalid dimension {d}")
    rec = 4 * (d + 1)
    if len(raw) % rec == 0:
        block = np.frombuffer(raw, dtype="<i4").reshape(-1, d + 1)
        if np.all(block[:, 0] == d):
            return np.frombuffer(raw, dtype="<f4").reshape(-1, d + 1)[:, 1:].astype(np.float64)
    # locate the first bad record
    off = 0
    idx = 0
    while off < len(raw):
        if off + 4 > len(raw):
            raise ParseError(f"record {idx} at byte {off}: truncated dimension field")
        di = int(np.frombuffer(raw, dtype="<i4", count=1, offset=off)[0])
        if di != d:
            raise ParseError(f"record {idx} at byte {off}: dimension {di}, expected {d}")
        if off + rec > len(raw):
            raise ParseError(f"record {idx} at byte {off}: truncated, needs {rec} bytes, {len(raw) - off} left")
        off += rec
        idx += 1
    raise ParseError("malformed fvecs payload")  # unreachable when sizes disagree


def encode_fvecs(X: np.ndarray, allow_lossy: bool = False) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array")
    f32 = X.astype("<f4")
    if not allow_lossy and not np.array_equal(f32.astype(np.float64), X):
        raise ValueError("values are not exactly representable as float32; pass allow_lossy=True")
    n, d = X.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = f32.view("<i4")
    return out.tobytes()


def parse_csv(text: str) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, 1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header
            raise ParseError(f"line {lineno}: non-numeric value in {row!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(f"line {lineno}: {len(vals)} columns, expected {width}")
        rows.append(vals)
    if not rows:
        return np.zeros((0, width or 1))
    return np.asarray(rows, dtype=np.float64)


def encode_csv(X: np.ndarray, header: bool = False) -> str:
    X = np.asarray(X, dtype=np.float64)
    lines = []
    if header:
        lines.append(",".join(f"x{i}" for i in range(X.shape[1])))
    for row in X:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + ("\n" if lines else "")


def load(path, format: str | None = None, metric: str = "l2", dedup: bool = True) -> Dataset:
    """Read a dataset; repeated rows are dropped (first kept) and listed in ``dedup_report``."""
    fmt = format or infer_format(path)
    raw = _read_bytes(path)
    if fmt == "fvecs":
        X = parse_fvecs(raw)
    elif fmt == "csv":
        X = parse_csv(raw.decode("utf-8"))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return Dataset.from_array(X, metric=metric, dedup=dedup)


def save(dataset: Dataset, path, format: str | None = None, allow_lossy: bool = False, header: bool = False) -> None:
    fmt = format or infer_format(path)
    if fmt == "fvecs":
        _write_bytes(path, encode_fvecs(dataset.coords, allow_lossy=allow_lossy))
    elif fmt == "csv":
        _write_bytes(path, encode_csv(dataset.coords, header=header).encode("utf-8"))
    else:
        raise ValueError(f"unknown format {fmt!r}")
