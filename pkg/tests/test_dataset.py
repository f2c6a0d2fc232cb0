import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermorom.dataset import (
    Block,
    Trajectory,
    denormalize,
    ingest_external,
    inspect_trajectory,
    load_trajectory,
    normalize,
    parse_layout,
    save_trajectory,
    split,
)
from thermorom.io import FormatError, read_container, write_container


def three_block(n_nodes=5, n_snap=7, seed=0):
    rng = np.random.default_rng(seed)
    blocks = parse_layout("q:3,v:3,sigma:6")
    return Trajectory(rng.normal(size=(n_snap, 12 * n_nodes)), 0.01, blocks, n_nodes)


def test_split_sizes_couette():
    s = split(150, 0.8, seed=1)
    assert (len(s.train), len(s.test)) == (120, 30)


def test_split_sizes_tire():
    s = split(200, 0.8, seed=1)
    assert (len(s.train), len(s.test)) == (160, 40)


def test_split_is_deterministic():
    a, b = split(10, 0.8, seed=3), split(10, 0.8, seed=3)
    np.testing.assert_array_equal(a.train, b.train)
    np.testing.assert_array_equal(a.test, b.test)


@pytest.mark.parametrize("n, frac", [(1, 0.5), (2, 0.1), (10, 1.0), (10, 0.0)])
def test_degenerate_split_rejected(n, frac):
    with pytest.raises(ValueError):
        split(n, frac)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 500), frac=st.floats(0.05, 0.95), seed=st.integers(0, 2**31))
def test_split_is_partition(n, frac, seed):
    try:
        s = split(n, frac, seed)
    except ValueError:
        return
    assert not set(s.train) & set(s.test)
    assert sorted([*s.train, *s.test]) == list(range(n))
    assert len(s.train) == round(frac * n)


def test_layout_parsing():
    blocks = parse_layout("q:3,v:3,sigma:6")
    assert blocks == (Block("q", 3), Block("v", 3), Block("sigma", 6))
    assert parse_layout("q,v") == (Block("q"), Block("v"))
    with pytest.raises(ValueError):
        parse_layout("q:0")


def test_block_widths_for_three_block_file():
    tr = three_block(n_nodes=5)
    assert tr.D == 60
    widths = {k: s.stop - s.start for k, s in tr.block_slices().items()}
    assert widths == {"q": 15, "v": 15, "sigma": 30}
    assert list(tr.variable_columns())[:4] == ["q1", "q2", "q3", "v1"]


def test_width_mismatch_rejected():
    with pytest.raises(ValueError, match="does not match layout"):
        Trajectory(np.zeros((3, 7)), 0.1, parse_layout("a:2"), 3)


def test_constant_block_normalization():
    z = np.hstack([np.full((4, 2), 3.0), np.arange(8.0).reshape(4, 2)])
    tr = Trajectory(z, 1.0, parse_layout("a,b"), 2)
    out, stats = normalize(tr)
    assert stats["a"] == (3.0, 1.0)
    np.testing.assert_array_equal(out.block("a"), 0.0)


def test_normalized_block_has_unit_std():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    x = (x - x.mean()) / x.std() * 2 + 5
    out, stats = normalize(Trajectory(x, 1.0, (Block("a"),), 4))
    assert abs(out.snapshots.mean()) < 1e-12 and abs(out.snapshots.std() - 1) < 1e-12
    assert stats["a"][0] == pytest.approx(5) and stats["a"][1] == pytest.approx(2)


def test_normalization_roundtrip_and_idempotence():
    tr = three_block(seed=2)
    tr = Trajectory(tr.snapshots * 7 + 3, tr.dt, tr.blocks, tr.n_nodes)
    norm, _ = normalize(tr)
    assert np.max(np.abs(denormalize(norm).snapshots - tr.snapshots)) < 1e-12
    again, stats = normalize(norm)
    for shift, scale in stats.values():
        assert abs(shift) < 1e-10 and abs(scale - 1) < 1e-10
    assert np.max(np.abs(denormalize(again).snapshots - tr.snapshots)) < 1e-12


def test_trajectory_roundtrip(tmp_path):
    tr = three_block()
    save_trajectory(tmp_path / "t.traj", tr)
    back = load_trajectory(tmp_path / "t.traj")
    np.testing.assert_array_equal(back.snapshots, tr.snapshots)
    assert back.blocks == tr.blocks and back.dt == tr.dt and back.n_nodes == tr.n_nodes


def test_ingest_container_keeps_data(tmp_path):
    tr = three_block()
    save_trajectory(tmp_path / "t.traj", tr)
    back = ingest_external(tmp_path / "t.traj")
    np.testing.assert_array_equal(back.snapshots, tr.snapshots)
    assert back.normalization is None


def test_ingest_container_layout_mismatch(tmp_path):
    save_trajectory(tmp_path / "t.traj", three_block())
    with pytest.raises(ValueError, match="layout"):
        ingest_external(tmp_path / "t.traj", layout="q:6,sigma:6")


def test_ingest_csv_normalizes_per_block(tmp_path):
    tr = three_block(n_nodes=5)
    np.savetxt(tmp_path / "d.csv", tr.snapshots * 10 + 1, delimiter=",")
    got = ingest_external(tmp_path / "d.csv", layout="q:3,v:3,sigma:6", n_nodes=5, dt=0.01)
    assert got.D == 60 and got.normalization is not None
    for name in ("q", "v", "sigma"):
        assert abs(got.block(name).mean()) < 1e-12


def test_ingest_csv_reports_row_and_column(tmp_path):
    (tmp_path / "bad.csv").write_text("1,2,3,4\n1,2,x,4\n")
    with pytest.raises(ValueError, match="row 1, column 2"):
        ingest_external(tmp_path / "bad.csv", layout="a:2", n_nodes=2)
    (tmp_path / "short.csv").write_text("1,2,3\n")
    with pytest.raises(ValueError, match="row 0 has 3 columns"):
        ingest_external(tmp_path / "short.csv", layout="a:2", n_nodes=2)


def test_tire_scale_header_checked_without_payload(tmp_path):
    head = {"kind": "trajectory", "dt": 0.0025, "layout": "q:3,v:3,sigma:6", "n_nodes": 4140,
            "N_T": 200, "D": 49680, "seed": None, "normalization": None, "metadata": {},
            "format": "thermorom-container", "format_version": 1,
            "arrays": [{"name": "snapshots", "shape": [200, 49680]}]}
    path = tmp_path / "tire.traj"
    path.write_bytes(json.dumps(head).encode() + b"\n")  # header only, no payload
    assert inspect_trajectory(path)["D"] == 49680
    with pytest.raises(FormatError):
        load_trajectory(path)


def test_header_layout_inconsistency_detected(tmp_path):
    tr = three_block()
    path = tmp_path / "t.traj"
    save_trajectory(path, tr)
    raw = path.read_bytes()
    head_end = raw.index(b"\n")
    head = json.loads(raw[:head_end])
    head["n_nodes"] = 6
    path.write_bytes(json.dumps(head).encode() + raw[head_end:])
    with pytest.raises(FormatError):
        inspect_trajectory(path)


def test_container_roundtrip_and_truncation(tmp_path):
    arrays = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.array([1.5]))]
    write_container(tmp_path / "c.bin", {"x": 1}, arrays)
    head, got = read_container(tmp_path / "c.bin")
    assert head["x"] == 1
    np.testing.assert_array_equal(got["a"], arrays[0][1])
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        read_container(tmp_path / "cut.bin")
