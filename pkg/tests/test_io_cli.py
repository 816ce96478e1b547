import json
import struct

import numpy as np
import pytest

from depthbins import io
from depthbins.cli import main
from depthbins.config import config_from_dict, load_config
from depthbins.degrade import synthetic_scene
from depthbins.types import DepthMap, FormatError, ValidationError


def masked_depth(shape=(5, 7), seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=shape) > 0.2
    return DepthMap(rng.uniform(10, 900, shape), mask)


def test_raw_round_trip_bit_exact(tmp_path):
    d = masked_depth()
    io.write_depth(d, tmp_path / "d.raw")
    back = io.read_depth(tmp_path / "d.raw")
    assert back.values.tobytes() == d.values.tobytes()
    assert np.array_equal(back.mask, d.mask)


def test_pgm_millimeters(tmp_path):
    path = tmp_path / "d.pgm"
    path.write_bytes(b"P5\n2 1\n65535\n" + struct.pack(">HH", 1234, 0))
    d = io.read_depth(path)
    assert d.values[0, 0] == pytest.approx(123.4, abs=1e-12)
    assert d.mask.tolist() == [[True, False]]


def test_pgm_round_trip_at_mm_precision(tmp_path):
    d = DepthMap(np.round(masked_depth().values, 1), masked_depth().mask)
    io.write_depth(d, tmp_path / "d.pgm")
    back = io.read_depth(tmp_path / "d.pgm")
    assert np.array_equal(back.mask, d.mask)
    np.testing.assert_allclose(back.values[d.mask], d.values[d.mask], atol=1e-9)


@pytest.mark.parametrize("scale, fmt", [(-1.0, "<f4"), (1.0, ">f4")])
def test_pfm_endianness(tmp_path, scale, fmt):
    grid = np.array([[1.5, 2.5], [3.5, np.nan]], dtype=fmt)
    path = tmp_path / "d.pfm"
    # rows are stored bottom to top
    path.write_bytes(f"Pf\n2 2\n{scale}\n".encode() + grid[::-1].tobytes())
    d = io.read_depth(path)
    assert d.values[0].tolist() == [1.5, 2.5]
    assert d.mask.tolist() == [[True, True], [True, False]]


def test_pfm_round_trip(tmp_path):
    d = DepthMap(np.float32(masked_depth().values).astype(float), masked_depth().mask)
    io.write_depth(d, tmp_path / "d.pfm")
    back = io.read_depth(tmp_path / "d.pfm")
    assert np.array_equal(back.mask, d.mask)
    assert np.array_equal(back.values[d.mask], d.values[d.mask])


def test_bad_magic(tmp_path):
    p = tmp_path / "d.raw"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError) as err:
        io.read_depth(p)
    assert err.value.kind == "bad-magic"


def test_truncated_raw(tmp_path):
    p = tmp_path / "d.raw"
    io.write_depth(masked_depth(), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError) as err:
        io.read_depth(p)
    assert err.value.kind == "truncated-file"


def test_unknown_extension(tmp_path):
    with pytest.raises(FormatError) as err:
        io.read_depth(tmp_path / "d.png")
    assert err.value.kind == "unknown-format"


def test_dimension_overflow(tmp_path):
    p = tmp_path / "d.raw"
    p.write_bytes(io.RAW_MAGIC + struct.pack("<III", 1, 1 << 20, 4))
    with pytest.raises(FormatError) as err:
        io.read_depth(p)
    assert err.value.kind == "dimension-overflow"


def test_malformed_ppm_header(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\nx 2\n255\n" + bytes(12))
    with pytest.raises(FormatError):
        io.read_color(p)


def test_color_round_trip(tmp_path):
    _, color = synthetic_scene(6, 5, seed=1)
    io.write_color(color, tmp_path / "c.ppm")
    back = io.read_color(tmp_path / "c.ppm")
    assert back.values.shape == (3, 6, 5)
    np.testing.assert_allclose(back.values, color.values, atol=0.5 / 255 + 1e-12)


def test_heatmap_identical_maps_lowest_color():
    d = masked_depth()
    rgb = io.error_heatmap(d, d)
    low = io.error_colormap()[0]
    assert np.all(rgb[d.mask] == low)
    assert np.all(rgb[~d.mask] == 0)


def test_heatmap_single_error_pixel_top_bin():
    gt = DepthMap(np.full((4, 4), 50.0))
    v = gt.values.copy()
    v[2, 1] = 60.0
    rgb = io.error_heatmap(DepthMap(v), gt)
    cmap = io.error_colormap()
    assert np.array_equal(rgb[2, 1], cmap[255])
    assert np.all(rgb[0, 0] == cmap[0])


def test_heatmap_shape_mismatch():
    with pytest.raises(ValidationError):
        io.error_heatmap(DepthMap(np.ones((2, 2))), DepthMap(np.ones((2, 3))))


def test_tensor_container_round_trip(tmp_path):
    t = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "c": np.zeros((0, 4))}
    io.write_tensors(t, tmp_path / "w.bin", meta={"n": 3})
    back, meta = io.read_tensors(tmp_path / "w.bin")
    assert meta == {"n": 3}
    for k in t:
        assert back[k].shape == t[k].shape
        assert back[k].tobytes() == t[k].tobytes()


def test_tensor_container_errors(tmp_path):
    p = tmp_path / "w.bin"
    io.write_tensors({"a": np.ones(10)}, p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        io.read_tensors(p)
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError):
        io.read_tensors(p)


def test_config_loading(tmp_path):
    io.write_tensors({"x": np.ones(1)}, tmp_path / "w.bin")
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"hyper": {"n_bins": 8, "n_stages": 2}, "weights": "w.bin", "smooth_k": 5}))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.hyper.n_bins == 8 and cfg.hyper.n_stages == 2 and cfg.smooth_k == 5
    assert cfg.weights == str(tmp_path / "w.bin")


@pytest.mark.parametrize("data", [
    {"hyper": {"n_bins": 0}},
    {"bogus": 1},
    {"provider": "magic"},
    {"provider": "external-file"},
])
def test_config_rejects(data):
    with pytest.raises(ValidationError):
        config_from_dict(data)


def test_config_not_json(tmp_path):
    (tmp_path / "c.json").write_text("{nope")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "c.json")


# ---- command line ----

@pytest.fixture
def scene(tmp_path):
    gt, color = synthetic_scene(24, 24, seed=3)
    io.write_depth(gt, tmp_path / "gt.raw")
    io.write_color(color, tmp_path / "color.ppm")
    return tmp_path


def test_cli_degrade_identity_then_eval(scene, capsys):
    assert main(["degrade", "--in", str(scene / "gt.raw"), "--scale", "1",
                 "--out", str(scene / "lr.raw")]) == 0
    assert main(["eval", "--pred", str(scene / "lr.raw"), "--gt", str(scene / "gt.raw"), "--json"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["rmse"] == 0.0 and rec["mae"] == 0.0 and rec["delta1"] == 100.0


def test_cli_eval_shape_mismatch(scene, capsys):
    main(["degrade", "--in", str(scene / "gt.raw"), "--scale", "2", "--out", str(scene / "lr.raw")])
    code = main(["eval", "--pred", str(scene / "lr.raw"), "--gt", str(scene / "gt.raw")])
    err = capsys.readouterr().err
    assert code == 1
    assert "(12, 12)" in err and "(24, 24)" in err


def test_cli_io_error(tmp_path, capsys):
    code = main(["eval", "--pred", str(tmp_path / "missing.raw"), "--gt", str(tmp_path / "x.raw")])
    assert code == 2
    assert "I/O error" in capsys.readouterr().err


def test_cli_bad_arguments():
    assert main(["degrade", "--scale", "2"]) == 1
    assert main(["nonsense"]) == 1


def test_cli_validation_error(scene):
    assert main(["degrade", "--in", str(scene / "gt.raw"), "--scale", "-2",
                 "--out", str(scene / "lr.raw")]) == 1


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--trials", "100", "--step", "1e-4"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["max_rel_error"] <= 1e-5
    assert rep["step"] == 1e-4


def test_cli_gradcheck_reports_failure():
    # a step this coarse cannot meet a tight tolerance
    assert main(["gradcheck", "--trials", "5", "--step", "0.5", "--tol", "1e-12"]) == 1


def test_cli_refine_trace_and_reproducible(scene):
    (scene / "cfg.json").write_text(json.dumps(
        {"hyper": {"n_bins": 8, "n_stages": 2, "hidden_channels": 8}, "encoder_channels": 4}))
    base = ["--lr", str(scene / "lr.raw"), "--color", str(scene / "color.ppm"),
            "--config", str(scene / "cfg.json")]
    assert main(["degrade", "--in", str(scene / "gt.raw"), "--scale", "4",
                 "--out", str(scene / "lr.raw")]) == 0
    assert main(["refine", *base, "--out", str(scene / "a.raw"), "--trace", str(scene / "tr")]) == 0
    assert main(["refine", *base, "--out", str(scene / "b.raw")]) == 0
    assert (scene / "a.raw").read_bytes() == (scene / "b.raw").read_bytes()
    for i in (1, 2):
        assert io.read_depth(scene / "tr" / f"stage{i}_depth.raw").shape == (24, 24)
        ent = io.read_depth(scene / "tr" / f"stage{i}_entropy.pfm")
        assert np.all(ent.values >= -1e-6) and np.all(ent.values <= np.log(8) + 1e-5)
    final = io.read_depth(scene / "a.raw")
    assert final.values.tobytes() == io.read_depth(scene / "tr" / "stage2_depth.raw").values.tobytes()


def test_cli_init_weights_feed_refine(scene):
    (scene / "cfg.json").write_text(json.dumps(
        {"hyper": {"n_bins": 4, "n_stages": 1, "hidden_channels": 4}, "encoder_channels": 4}))
    assert main(["init-weights", "--config", str(scene / "cfg.json"), "--out", str(scene / "w.bin")]) == 0
    tensors, meta = io.read_tensors(scene / "w.bin")
    assert meta["n_stages"] == 1 and all(k.startswith("stage0.") for k in tensors)
    (scene / "cfg2.json").write_text(json.dumps(
        {"hyper": {"n_bins": 4, "n_stages": 1, "hidden_channels": 4}, "encoder_channels": 4,
         "weights": "w.bin"}))
    main(["degrade", "--in", str(scene / "gt.raw"), "--scale", "2", "--out", str(scene / "lr.raw")])
    common = ["--lr", str(scene / "lr.raw"), "--color", str(scene / "color.ppm")]
    assert main(["refine", *common, "--config", str(scene / "cfg.json"), "--out", str(scene / "a.raw")]) == 0
    assert main(["refine", *common, "--config", str(scene / "cfg2.json"), "--out", str(scene / "b.raw")]) == 0
    assert (scene / "a.raw").read_bytes() == (scene / "b.raw").read_bytes()


def test_cli_errmap(scene):
    assert main(["errmap", "--pred", str(scene / "gt.raw"), "--gt", str(scene / "gt.raw"),
                 "--out", str(scene / "e.ppm")]) == 0
    rgb = io.read_color(scene / "e.ppm")
    assert rgb.values.shape == (3, 24, 24)
