import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcrealism import checkpoint, io
from pcrealism.io import FormatError
from pcrealism.net import Adam, MetricModel
from pcrealism.pcgen import PointCloud

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 30), st.just(3)), elements=finite),
       st.sampled_from([".xyz", ".f32", ".bin"]))
def test_save_load_save_byte_identical(tmp_path_factory, pts, ext):
    d = tmp_path_factory.mktemp("rt")
    a, b = d / f"a{ext}", d / f"b{ext}"
    io.save_cloud(a, pts)
    io.save_cloud(b, io.load_cloud(a))
    assert a.read_bytes() == b.read_bytes()


def test_xyz_values_exact(tmp_path):
    pts = np.array([[0.1, -2.5, 1e-7], [3.0, 4.0, 5.0]])
    io.write_xyz(tmp_path / "p.xyz", pts)
    np.testing.assert_array_equal(io.read_xyz(tmp_path / "p.xyz").points, pts)
    assert (tmp_path / "p.xyz").read_text().splitlines()[0] == "0.1 -2.5 1e-07"


def test_binary_layouts(tmp_path):
    pts = np.arange(12, dtype=np.float64).reshape(4, 3)
    io.write_binary(tmp_path / "a.f32", pts)
    assert (tmp_path / "a.f32").stat().st_size == 4 * 12
    raw = np.concatenate([pts, np.full((4, 1), 7.0)], axis=1).astype("<f4")
    (tmp_path / "k.bin").write_bytes(raw.tobytes())
    np.testing.assert_array_equal(io.load_cloud(tmp_path / "k.bin").points, pts)


def test_malformed_inputs_name_offset(tmp_path):
    (tmp_path / "t.f32").write_bytes(b"\0" * 14)
    with pytest.raises(FormatError, match="byte offset 12") as e:
        io.load_cloud(tmp_path / "t.f32")
    assert e.value.offset == 12
    (tmp_path / "t.xyz").write_text("1 2 3\n4 five 6\n")
    with pytest.raises(FormatError, match="byte offset 6"):
        io.load_cloud(tmp_path / "t.xyz")
    (tmp_path / "t2.xyz").write_text("1 2 3\n4 5\n")
    with pytest.raises(FormatError, match="byte offset 6"):
        io.load_cloud(tmp_path / "t2.xyz")
    nan = np.array([[0, 0, 0], [np.nan, 0, 0]], "<f4")
    (tmp_path / "n.f32").write_bytes(nan.tobytes())
    with pytest.raises(FormatError, match="byte offset 12"):
        io.load_cloud(tmp_path / "n.f32")
    with pytest.raises(ValueError):
        io.load_cloud(tmp_path / "x.las")


def test_ply_export(tmp_path):
    pts = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    io.write_ply(tmp_path / "c.ply", pts, np.array([[0, 255, 0], [255, 0, 0]]))
    text = (tmp_path / "c.ply").read_text()
    assert "property uchar red" in text and text.rstrip().endswith("4.0 5.0 6.0 255 0 0")
    np.testing.assert_array_equal(io.read_ply(tmp_path / "c.ply").points, pts)
    with pytest.raises(ValueError):
        io.write_ply(tmp_path / "d.ply", pts, np.zeros((3, 3)))


# -- checkpoints ---------------------------------------------------------------


def _trained_state():
    model = MetricModel(u_a=7, lam=0.3, seed=4)
    opt = Adam(warmup=10)
    grads = {k: np.random.default_rng(0).normal(size=v.shape).astype(np.float32)
             for k, v in model.params.items()}
    opt.step(model.params, grads)
    return model, opt


def test_checkpoint_round_trip(tmp_path):
    model, opt = _trained_state()
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, model, opt)
    m2, o2 = checkpoint.load(path)
    assert m2.hparams() == model.hparams()
    for k in model.params:
        np.testing.assert_array_equal(m2.params[k], model.params[k])
        np.testing.assert_array_equal(o2.m[k], opt.m[k])
        np.testing.assert_array_equal(o2.v[k], opt.v[k])
    assert o2.t == 1 and o2.warmup == 10
    assert checkpoint.dumps(m2, o2) == path.read_bytes()


def test_checkpoint_layout_header(tmp_path):
    model, opt = _trained_state()
    data = checkpoint.dumps(model, opt)
    assert data[:8] == b"PCRLCKPT"
    assert int.from_bytes(data[8:12], "little") == 1


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "missing.ckpt")
    model, opt = _trained_state()
    data = checkpoint.dumps(model, opt)
    with pytest.raises(FormatError, match="byte offset 0"):
        checkpoint.loads(b"NOTACKPT" + data[8:])
    with pytest.raises(FormatError, match="byte offset") as e:
        checkpoint.loads(data[:-10])
    assert 0 < e.value.offset <= len(data)
    with pytest.raises(FormatError, match="trailing"):
        checkpoint.loads(data + b"\0")


def test_point_cloud_container():
    pc = PointCloud([[1, 2, 3], [4, 5, 6]], dataset=3, category=1)
    assert len(pc) == 2 and pc.points.dtype == np.float64
    sub = pc.subset(np.array([False, True]))
    assert sub.points.tolist() == [[4, 5, 6]] and sub.dataset == 3
