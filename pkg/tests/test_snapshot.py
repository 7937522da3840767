import json

import pytest

from grng import snapshot
from grng.datagen import GenSpec, generate
from grng.hierarchy import HierarchyConfig, build, calibrate_radii
from grng.oracles import brute_rng


@pytest.fixture(scope="module")
def built():
    ds = generate(GenSpec("gaussian-clusters", n=300, dim=3, seed=5))
    h, _ = build(ds, HierarchyConfig(radii=calibrate_radii(ds.coords, [5, 30])))
    return ds, h


@pytest.mark.parametrize("name", ["h.json", "h.json.gz"])
def test_roundtrip_preserves_everything(tmp_path, built, name):
    ds, h = built
    path = tmp_path / name
    snapshot.save(h, path)
    g = snapshot.load(path)
    assert g.radii == h.radii and g.layer_sizes() == h.layer_sizes()
    for la, lb in zip(h.layers, g.layers):
        assert la.edges() == lb.edges()
    assert g.metric.stats.table == h.metric.stats.table
    # keeps working after reload
    g.insert((0.0001, 0.0002, 0.0003))
    pts = [g.coords[i] for i in sorted(g.coords)]
    assert g.graph() == brute_rng(pts)


def test_rejects_wrong_version_and_format(built):
    _, h = built
    doc = snapshot.to_dict(h)
    with pytest.raises(snapshot.SnapshotError, match="version"):
        snapshot.from_dict({**doc, "version": 99})
    with pytest.raises(snapshot.SnapshotError, match="format"):
        snapshot.from_dict({**doc, "format": "other"})


def test_rejects_tampered_snapshot(built):
    _, h = built
    doc = json.loads(json.dumps(snapshot.to_dict(h)))
    entry = doc["layers"][-1]["entries"][0]
    entry["neighbors"] = entry["neighbors"][1:]
    with pytest.raises(snapshot.SnapshotError, match="validation"):
        snapshot.from_dict(doc)
    broken = {k: v for k, v in snapshot.to_dict(h).items() if k != "radii"}
    with pytest.raises(snapshot.SnapshotError, match="malformed"):
        snapshot.from_dict(broken)


def test_unreadable_file(tmp_path):
    p = tmp_path / "junk.json"
    p.write_bytes(b"\xff\xfe not json")
    with pytest.raises(snapshot.SnapshotError):
        snapshot.load(p)
