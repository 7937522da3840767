"""Versioned JSON snapshots of a hierarchy (optionally gzipped)."""

from __future__ import annotations

import gzip
import json
from pathlib import Path

from .hierarchy import Hierarchy, HierarchyConfig, Layer, PivotEntry, validate
from .metric import CountedMetric, StageStats, get_metric, metric_name

FORMAT = "grng-hierarchy"
VERSION = 1


class SnapshotError(ValueError):
    pass


def _entry_to_json(e: PivotEntry) -> dict:
    return {
        "id": e.point_id,
        "radius": e.radius,
        "seq": e.seq,
        "parents": [[k, v] for k, v in e.parents.items()],
        "children": [[k, v] for k, v in e.children.items()],
        "neighbors": [[k, v] for k, v in e.neighbors.items()],
        "coarse_nbrs": sorted(e.coarse_nbrs),
        "coarse_seen": e.coarse_seen,
        "delta_max": e.delta_max,
        "bar_mu_max": e.bar_mu_max,
        "reach": list(e.reach),
    }


def _entry_from_json(d: dict) -> PivotEntry:
    return PivotEntry(
        point_id=int(d["id"]),
        radius=float(d["radius"]),
        seq=int(d["seq"]),
        parents={int(k): float(v) for k, v in d["parents"]},
        children={int(k): float(v) for k, v in d["children"]},
        neighbors={int(k): float(v) for k, v in d["neighbors"]},
        coarse_nbrs=frozenset(int(k) for k in d["coarse_nbrs"]),
        coarse_seen=int(d["coarse_seen"]),
        delta_max=float(d["delta_max"]),
        bar_mu_max=float(d["bar_mu_max"]),
        reach=[float(v) for v in d["reach"]],
    )


def to_dict(h: Hierarchy) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "metric": metric_name(h.metric.inner),
        "dim": h.dim,
        "config": h.config.to_dict(),
        "radii": list(h.radii),
        "points": [[pid, list(h.coords[pid])] for pid in h.order],
        "layers": [
            {
                "index": layer.index,
                "radius": layer.radius,
                "next_seq": layer.next_seq,
                "entries": [_entry_to_json(e) for e in layer.entries.values()],
            }
            for layer in h.layers
        ],
        "stats": h.metric.stats.to_dict(),
        "evaluations": h.metric.evaluations,
    }


def from_dict(doc: dict, check: bool = True, audit_cap: int = 2000) -> Hierarchy:
    if doc.get("format") != FORMAT:
        raise SnapshotError(f"not a hierarchy snapshot (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise SnapshotError(f"unsupported snapshot version {doc.get('version')!r}; expected {VERSION}")
    try:
        config = HierarchyConfig.from_dict(doc["config"])
        metric = CountedMetric(get_metric(doc["metric"]), cache=config.cache)
        metric.stats = StageStats.from_dict(doc.get("stats", {}))
        metric.evaluations = int(doc.get("evaluations", 0))
        h = Hierarchy(config, metric, radii=doc["radii"], dim=doc["dim"])
        for pid, coords in doc["points"]:
            q = tuple(float(v) for v in coords)
            h.coords[int(pid)] = q
            h._by_coords[q] = int(pid)
            h.order.append(int(pid))
            h._grow_scale(q)
        if len(doc["layers"]) != len(h.layers):
            raise SnapshotError("layer count disagrees with radii")
        for layer_doc, layer in zip(doc["layers"], h.layers):
            layer.next_seq = int(layer_doc["next_seq"])
            for ed in layer_doc["entries"]:
                e = _entry_from_json(ed)
                layer.entries[e.point_id] = e
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SnapshotError):
            raise
        raise SnapshotError(f"malformed snapshot: {exc}") from exc
    if check:
        rep = validate(h, audit_cap=audit_cap)
        if not rep.ok:
            raise SnapshotError("snapshot fails validation: " + "; ".join(rep.violations[:5]))
    return h


def save(h: Hierarchy, path) -> None:
    data = json.dumps(to_dict(h), separators=(",", ":")).encode("utf-8")
    if str(path).endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    Path(path).write_bytes(data)


def load(path, check: bool = True, audit_cap: int = 2000) -> Hierarchy:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"unreadable snapshot: {exc}") from exc
    return from_dict(doc, check=check, audit_cap=audit_cap)


__all__ = ["save", "load", "to_dict", "from_dict", "SnapshotError", "VERSION", "Layer"]
