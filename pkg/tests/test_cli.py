"""Command-line driver: exit codes, JSON summaries and exported files."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fstucker.cli import main
from fstucker.ingestion import StructuredGrid
from fstucker.model import deserialize
from fstucker.tensor import read_tensor, write_tensor

SMALL = ["--basis-legendre-p", "12", "--basis-wavelet-s", "2", "--basis-wavelet-p", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, (json.loads(out[-1]) if out else None)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def read_pgm(path):
    raw = open(path, "rb").read()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = map(int, dims.split())
    assert magic == b"P5" and maxval == b"255"
    return np.frombuffer(body, np.uint8).reshape(h, w)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A flame-front cloud and a model compressed from it."""
    root = tmp_path_factory.mktemp("cli")
    cloud, model = root / "cloud.fpcl", root / "model.fstk"
    assert main(["synth", "--kind", "flame-front", "--shape", "24,24,24",
                 "--cloud", str(cloud), "--scatter", "40000", "--seed", "3"]) == 0
    assert main(["compress", "-i", str(cloud), "-o", str(model), "--grid", "24",
                 "--tucker-eps", "5e-2", "--subsample-frac", "0.5", *SMALL]) == 0
    return root, cloud, model


def test_synth_outputs(tmp_path, capsys):
    code, js = run(capsys, "synth", "--kind", "smooth", "--shape", "6,5,4",
                   "-o", tmp_path / "t.ften", "--cloud", tmp_path / "c.csv", "--scatter", 30)
    assert code == 0
    assert js["command"] == "synth" and js["points"] == 30
    assert read_tensor(tmp_path / "t.ften").shape == (6, 5, 4)
    assert len(read_rows(tmp_path / "c.csv")) == 30


def test_synth_needs_an_output(capsys):
    assert run(capsys, "synth")[0] == 3


def test_synth_bad_params(tmp_path, capsys):
    assert run(capsys, "synth", "-o", tmp_path / "t.ften", "--params", "{oops")[0] == 3
    assert run(capsys, "synth", "-o", tmp_path / "t.ften", "--params", '{"width": "wide"}')[0] == 3
    assert run(capsys, "synth", "-o", tmp_path / "t.ften", "--kind", "turbulence")[0] == 3


def test_compress_summary(work, capsys):
    root, cloud, _ = work
    out = root / "again.fstk"
    code, js = run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "24",
                   "--tucker-eps", "5e-2", "--subsample-frac", "0.5", *SMALL,
                   "--fits-csv", root / "fits.csv")
    assert code == 0
    model = deserialize(out)
    assert js["ranks"] == list(model.ranks)
    assert js["coeff_count"] == model.storage_cost().coeff_count
    assert js["bytes"] == 8 * js["coeff_count"]
    assert js["compression_ratio"] == pytest.approx(40000 * 8 / js["bytes"])
    assert [len(s) for s in js["sparsity"]] == list(model.ranks)
    assert js["validation_error"] < 0.1
    assert len(read_rows(root / "fits.csv")) == sum(model.ranks)
    cfg = model.metadata["run_config"]
    assert cfg["tucker_eps"] == 5e-2 and cfg["subsample_frac"] == 0.5 and cfg["seed"] == 0


def test_compress_is_deterministic(work, tmp_path, capsys):
    _, cloud, model = work
    args = ["compress", "-i", cloud, "--grid", "24", "--tucker-eps", "5e-2",
            "--subsample-frac", "0.5", *SMALL]
    assert run(capsys, *args, "-o", tmp_path / "a.fstk")[0] == 0
    assert run(capsys, *args, "-o", tmp_path / "b.fstk", "--threads", "2")[0] == 0
    ref = model.read_bytes()
    assert (tmp_path / "a.fstk").read_bytes() == ref
    # the thread count is part of the echoed run configuration, the numbers are not affected
    a, b = deserialize(tmp_path / "a.fstk"), deserialize(tmp_path / "b.fstk")
    np.testing.assert_array_equal(a.core, b.core)


def test_compress_structured_near_lossless(tmp_path, capsys):
    # rank-2 polynomial data: exactly representable by low-degree Legendre fits
    x = np.linspace(0.0, 1.0, 10)
    t = np.einsum("i,j,k->ijk", 1 + x, x**2, 2 - x) + np.einsum("i,j,k->ijk", x**3, 1 - x, 1 + x**2)
    write_tensor(tmp_path / "t.ften", t)
    code, js = run(capsys, "compress", "-i", tmp_path / "t.ften", "-o", tmp_path / "m.fstk",
                   "--tucker-eps", "1e-14", "--basis-legendre-p", "6", "--basis-wavelet-s", "-1")
    assert code == 0
    # round-off directions may survive such a tiny epsilon; their fits are empty
    assert js["tucker_error"] <= 1e-10
    assert js["validation_error"] <= 1e-10
    model = deserialize(tmp_path / "m.fstk")
    np.testing.assert_allclose(model.evaluate_grid([x] * 3), t, rtol=0, atol=1e-10 * np.abs(t).max())


@pytest.mark.slow
def test_compress_smooth_cloud_accuracy(tmp_path, capsys):
    cloud = tmp_path / "c.fpcl"
    assert run(capsys, "synth", "--kind", "smooth", "--shape", "100,100,100",
               "--cloud", cloud, "--scatter", 1_000_000)[0] == 0
    code, js = run(capsys, "compress", "-i", cloud, "-o", tmp_path / "m.fstk",
                   "--grid", "100", "--tucker-eps", "1e-2")
    assert code == 0
    assert js["validation_error"] <= 2e-2


def test_compress_errors(work, tmp_path, capsys):
    root, cloud, _ = work
    out = tmp_path / "m.fstk"
    assert run(capsys, "compress", "-i", tmp_path / "nope.csv", "-o", out, "--grid", "8")[0] == 2
    assert run(capsys, "compress", "-i", cloud, "-o", out)[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "8,8")[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "8", "--tucker-eps", "abc")[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "8", "--tucker-eps", "0")[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "8",
               "--subsample-frac", "1.5")[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", out, "--grid", "8",
               "--basis-legendre-p", "-1", "--basis-wavelet-s", "-1")[0] == 3
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "no" / "dir.fstk",
               "--grid", "8", *SMALL)[0] == 2
    (tmp_path / "bad.csv").write_text("y1,y2,value\n0.1,zz,3\n")
    assert run(capsys, "compress", "-i", tmp_path / "bad.csv", "-o", out, "--grid", "8")[0] == 2


def test_config_defaults_and_precedence(work, tmp_path, capsys):
    _, cloud, _ = work
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tucker_eps": 0.2, "grid": [12], "basis_legendre_p": 8,
                               "basis_wavelet_s": -1}))
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "a.fstk", "--config", cfg)[0] == 0
    rc = deserialize(tmp_path / "a.fstk").metadata["run_config"]
    assert rc["tucker_eps"] == 0.2 and rc["grid"] == [12] and rc["basis_legendre_p"] == 8
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "b.fstk", "--config", cfg,
               "--tucker-eps", "0.1")[0] == 0
    rc = deserialize(tmp_path / "b.fstk").metadata["run_config"]
    assert rc["tucker_eps"] == 0.1 and rc["grid"] == [12]
    cfg.write_text(json.dumps({"tucker_epsilon": 0.2}))
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "c.fstk", "--config", cfg)[0] == 3
    cfg.write_text("{not json")
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "c.fstk", "--config", cfg)[0] == 2
    assert run(capsys, "compress", "-i", cloud, "-o", tmp_path / "c.fstk",
               "--config", tmp_path / "missing.json")[0] == 2


def test_info(work, capsys):
    _, _, model = work
    code, js = run(capsys, "info", "-m", model)
    assert code == 0
    m = deserialize(model)
    assert js["ranks"] == list(m.ranks) and js["d"] == 3
    assert js["compression_ratio"] == pytest.approx(m.compression_ratio(40000))
    assert js["metadata"]["original_points"] == 40000


def test_model_file_errors(work, tmp_path, capsys):
    _, _, model = work
    assert run(capsys, "info", "-m", tmp_path / "none.fstk")[0] == 2
    raw = bytearray(model.read_bytes())
    raw[40] ^= 0xFF
    (tmp_path / "bad.fstk").write_bytes(bytes(raw))
    assert run(capsys, "info", "-m", tmp_path / "bad.fstk")[0] == 2


def test_reestimate(work, tmp_path, capsys):
    _, cloud, model = work
    r = int(np.prod(deserialize(model).ranks))
    code, js = run(capsys, "reestimate", "-m", model, "-i", cloud, "-o", tmp_path / "re.fstk")
    assert code == 0
    assert js["sample_rows"] == int(np.ceil(2.5 * r)) and js["core_size"] == r
    assert js["working_rows"] == 36000
    assert 0 < js["validation_after"] < 1 and 0 < js["validation_before"] < 1
    new = deserialize(tmp_path / "re.fstk")
    assert new.metadata["reestimate"]["sample_rows"] == js["sample_rows"]
    assert new.ranks == deserialize(model).ranks
    # with many rows the sketch approaches the least-squares core, which beats the grid core
    code, js = run(capsys, "reestimate", "-m", model, "-i", cloud, "-o", tmp_path / "w.fstk",
                   "--sketch-s", 200 * r, "--sketch-transform", "wht")
    assert code == 0 and js["sample_rows"] == 200 * r and js["transform"] == "wht"
    assert js["validation_after"] < js["validation_before"]


def test_reestimate_needs_more_rows_than_core(work, tmp_path, capsys):
    _, cloud, model = work
    r = int(np.prod(deserialize(model).ranks))
    for s in (r, r - 1):
        assert run(capsys, "reestimate", "-m", model, "-i", cloud, "-o", tmp_path / "x.fstk",
                   "--sketch-s", s)[0] == 3
    assert run(capsys, "reestimate", "-m", model, "-i", cloud, "-o", tmp_path / "x.fstk",
               "--sketch-transform", "dft")[0] == 3


def test_reconstruct_grid_matches_model(work, tmp_path, capsys):
    _, _, model = work
    code, js = run(capsys, "reconstruct", "-m", model, "-o", tmp_path / "r.ften", "--grid", "7,6,5")
    assert code == 0 and js["grid"] == [7, 6, 5]
    m = deserialize(model)
    grid = StructuredGrid((7, 6, 5), m.domains)
    t = read_tensor(tmp_path / "r.ften")
    np.testing.assert_allclose(t.ravel(order="F"), m.evaluate_batch(grid.nodes()), rtol=1e-12, atol=1e-14)


def test_reconstruct_at_training_grid(tmp_path, capsys):
    x = np.linspace(0, 1, 20)
    t = np.cos(2 * np.add.outer(np.add.outer(x, 0.5 * x), x**2))
    write_tensor(tmp_path / "t.ften", t)
    code, js = run(capsys, "compress", "-i", tmp_path / "t.ften", "-o", tmp_path / "m.fstk",
                   "--tucker-eps", "1e-3", "--basis-legendre-p", "15", "--basis-wavelet-s", "-1",
                   "--validation-points", t.size)
    assert code == 0
    assert run(capsys, "reconstruct", "-m", tmp_path / "m.fstk", "-o", tmp_path / "r.ften",
               "--grid", "20")[0] == 0
    rec = read_tensor(tmp_path / "r.ften")
    # with every node used for validation the two numbers are the same quantity
    err = np.linalg.norm(rec - t) / np.linalg.norm(t)
    assert err == pytest.approx(js["validation_error"], rel=1e-9)


def test_reconstruct_points(work, tmp_path, capsys):
    _, _, model = work
    m = deserialize(model)
    (tmp_path / "empty.csv").write_text("y1,y2,y3\n")
    code, js = run(capsys, "reconstruct", "-m", model, "--points", tmp_path / "empty.csv",
                   "-o", tmp_path / "e.csv")
    assert code == 0 and js["points"] == 0 and read_rows(tmp_path / "e.csv") == []

    y = [0.5 * (a + b) for a, b in m.domains]
    (tmp_path / "one.csv").write_text("y1,y2,y3\n" + ",".join(map(repr, y)) + "\n")
    code, js = run(capsys, "reconstruct", "-m", model, "--points", tmp_path / "one.csv",
                   "-o", tmp_path / "o.csv")
    rows = read_rows(tmp_path / "o.csv")
    assert code == 0 and js["out_of_domain"] == [] and len(rows) == 1
    assert float(rows[0]["value"]) == m.evaluate(y)

    outside = [m.domains[0][1] + 1.0, y[1], y[2]]
    lines = [",".join(map(repr, p)) for p in (y, outside, y)]
    (tmp_path / "mix.csv").write_text("y1,y2,y3\n" + "\n".join(lines) + "\n")
    code, js = run(capsys, "reconstruct", "-m", model, "--points", tmp_path / "mix.csv",
                   "-o", tmp_path / "m.csv")
    vals = [float(r["value"]) for r in read_rows(tmp_path / "m.csv")]
    assert code == 0 and js["out_of_domain"] == [1]
    assert np.isnan(vals[1]) and vals[0] == vals[2] == m.evaluate(y)


def test_reconstruct_errors(work, tmp_path, capsys):
    _, _, model = work
    assert run(capsys, "reconstruct", "-m", model, "-o", tmp_path / "x")[0] == 3
    assert run(capsys, "reconstruct", "-m", model, "-o", tmp_path / "x", "--grid", "4,4")[0] == 3
    (tmp_path / "bad.csv").write_text("y1,y2,y3\n1,2\n")
    assert run(capsys, "reconstruct", "-m", model, "-o", tmp_path / "x",
               "--points", tmp_path / "bad.csv")[0] == 2


def test_slice_constant_model(tmp_path, capsys):
    assert run(capsys, "synth", "--shape", "12,12,12", "-o", tmp_path / "c.ften",
               "--params", '{"amplitude": 0.0, "offset": 2.0}')[0] == 0
    assert run(capsys, "compress", "-i", tmp_path / "c.ften", "-o", tmp_path / "c.fstk",
               "--basis-legendre-p", "4", "--basis-wavelet-s", "-1")[0] == 0
    code, js = run(capsys, "slice", "-m", tmp_path / "c.fstk", "-o", tmp_path / "s.pgm",
                   "--resolution", "9,7")
    assert code == 0
    img = read_pgm(tmp_path / "s.pgm")
    assert img.shape == (7, 9) and np.all(img == img[0, 0])
    vals = np.array([float(r["value"]) for r in read_rows(js["csv"])])
    np.testing.assert_allclose(vals, 2.0, rtol=1e-12)
    assert js["min"] == pytest.approx(js["max"], rel=1e-12)


@pytest.fixture(scope="module")
def front_model(tmp_path_factory):
    root = tmp_path_factory.mktemp("front")
    assert main(["synth", "--kind", "flame-front", "--shape", "40,40,40", "--params",
                 '{"wrinkle": 0.0}', "-o", str(root / "f.ften")]) == 0
    assert main(["compress", "-i", str(root / "f.ften"), "-o", str(root / "f.fstk"),
                 "--tucker-eps", "1e-3", "--basis-legendre-p", "30"]) == 0
    return root / "f.fstk"


def test_slice_front_location(front_model, tmp_path, capsys):
    res = 64
    code, js = run(capsys, "slice", "-m", front_model, "-o", tmp_path / "s.pgm",
                   "--free", "0,2", "--fix", "1=0.3", "--resolution", res)
    assert code == 0 and js["fixed"] == {"1": 0.3}
    rows = read_rows(js["csv"])
    vals = np.array([float(r["value"]) for r in rows]).reshape(res, res)  # [x index, t index]
    x = np.linspace(0, 1, res)
    cell = x[1] - x[0]
    for j, t in enumerate(x):
        # values increase across the front; locate the 0.5 crossing by linear interpolation
        i = int(np.argmax(vals[:, j] >= 0.5))
        xf = x[i - 1] + (0.5 - vals[i - 1, j]) / (vals[i, j] - vals[i - 1, j]) * cell
        assert abs(xf - (0.35 + 0.3 * (t - 0.5))) <= 2 * cell


def test_slice_image_matches_csv(front_model, tmp_path, capsys):
    code, js = run(capsys, "slice", "-m", front_model, "-o", tmp_path / "s.pgm",
                   "--free", "2,0", "--resolution", "20,30", "--csv", tmp_path / "v.csv")
    assert code == 0
    img = read_pgm(tmp_path / "s.pgm")
    assert img.shape == (30, 20)
    rows = read_rows(tmp_path / "v.csv")
    vals = np.array([float(r["value"]) for r in rows]).reshape(20, 30)  # [mode-2 index, mode-0 index]
    lo, hi = vals.min(), vals.max()
    assert (lo, hi) == pytest.approx((js["min"], js["max"]), rel=1e-12)
    expect = np.round((vals - lo) / (hi - lo) * 255).astype(np.uint8)
    # columns follow the first free mode, rows the second from the bottom up
    np.testing.assert_array_equal(img, expect.T[::-1])


def test_slice_errors(front_model, tmp_path, capsys):
    out = tmp_path / "s.pgm"
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--free", "0,0")[0] == 3
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--free", "0,3")[0] == 3
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--fix", "5=0.1")[0] == 3
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--fix", "0=0.1")[0] == 3
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--fix", "2=abc")[0] == 3
    assert run(capsys, "slice", "-m", front_model, "-o", out, "--fix", "2=7.0")[0] == 3


def test_diagnostics(work, tmp_path, capsys):
    _, cloud, model = work
    code, js = run(capsys, "diagnostics", "-m", model, "-i", cloud, "--out-dir", tmp_path / "d",
                   "--leverage-rows", 2000, "--bins", 20, "--working-subset", 8192)
    assert code == 0
    decay = [float(r["abs_core"]) for r in read_rows(js["files"]["decay"])]
    assert decay == sorted(decay, reverse=True) and len(decay) == js["core_entries"]
    hist = read_rows(js["files"]["leverage_hist"])
    assert len(hist) == 20
    assert sum(int(r["count_before"]) for r in hist) == js["leverage_rows"] == 2000
    assert sum(int(r["count_after"]) for r in hist) == 2000
    assert js["leverage_max_mean_after"] < js["leverage_max_mean_before"]
    conv = read_rows(js["files"]["self_convergence"])
    deltas = np.array([float(r["delta"]) for r in conv])
    assert len(conv) == 15 and np.all(np.isfinite(deltas)) and np.all(deltas > 0)
    assert len(read_rows(js["files"]["fits"])) == sum(deserialize(model).ranks)


def test_diagnostics_without_data(work, tmp_path, capsys):
    _, _, model = work
    code, js = run(capsys, "diagnostics", "-m", model, "--out-dir", tmp_path / "d")
    assert code == 0 and set(js["files"]) == {"decay", "fits"}


def test_console_script_and_module(tmp_path):
    out = subprocess.run([sys.executable, "-m", "fstucker.cli", "synth", "--shape", "4,4",
                          "-o", str(tmp_path / "t.ften")], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["shape"] == [4, 4]
    out = subprocess.run([sys.executable, "-m", "fstucker.cli", "info", "-m",
                          str(tmp_path / "none")], capture_output=True, text=True)
    assert out.returncode == 2 and out.stdout == ""
    out = subprocess.run([sys.executable, "-m", "fstucker.cli", "bogus"], capture_output=True, text=True)
    assert out.returncode == 3
