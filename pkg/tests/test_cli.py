import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tapkrig import io as tio
from tapkrig.cli import main
from tapkrig.pipeline import (
    ConfigError, RunConfig, compute_mspe, load_config, parse_config_text, run_pipeline,
)

SMALL = """\
# a quick nested run
experiment = nested
grid_nx = 16
grid_ny = 12
n_samples = 300
n_waves = 600
taper_range = 0.08
basis_spacing = 1.0
n_lambdas = 25
ce_max_points = 200
em_max_iter = 300
lowrank_max_iter = 100
figures = false
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def experiment_dir(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    assert main(["experiment", "--config", str(small_cfg), "--out", str(out), "--seed", "5"]) == 0
    return out


def test_experiment_outputs(experiment_dir, capsys):
    m = tio.read_json(experiment_dir / "manifest.json")
    assert [r["method"] for r in m["comparison"]] == [
        "tapering", "low-rank", "combination", "conditional-expectation"]
    f = m["fit"]
    assert f["second_pass"]["n_selected"] >= f["first_pass"]["n_selected"]
    assert m["config"]["seed"] == 5 and "out" not in m["config"]
    nx, ny, mean, var = tio.read_grid_binary(experiment_dir / "prediction_combination.bin")
    assert (nx, ny) == (16, 12)
    assert np.all(var >= 0)
    _, _, truth, _ = tio.read_grid_binary(experiment_dir / "truth.bin")
    row = next(r for r in m["comparison"] if r["method"] == "combination")
    assert row["mspe"] == compute_mspe(mean, truth)
    assert tio.read_pgm(experiment_dir / "truth.pgm").shape == (12, 16)


def test_score_command(experiment_dir, capsys):
    a = str(experiment_dir / "truth.bin")
    b = str(experiment_dir / "prediction_tapering.bin")
    assert main(["score", "--pred", b, "--truth", a]) == 0
    m = tio.read_json(experiment_dir / "manifest.json")
    assert float(capsys.readouterr().out) == m["comparison"][0]["mspe"]


def test_fit_then_predict_roundtrip(experiment_dir, tmp_path, capsys):
    cfg = tmp_path / "fit.cfg"
    cfg.write_text(SMALL.replace("experiment = nested\n", ""))
    out = tmp_path / "fit"
    code = main(["fit", "--config", str(cfg), "--input", str(experiment_dir / "samples.csv"),
                 "--out", str(out)])
    assert code == 0
    assert "basis functions" in capsys.readouterr().out
    for name in ("model.json", "model.npz", "prediction.bin", "prediction.csv",
                 "prediction_mean.pgm", "prediction_variance.pgm", "variogram.csv",
                 "lasso_path.csv", "em_first.csv", "em_final.csv", "manifest.json",
                 "timings.json", "dictionary.csv"):
        assert (out / name).exists(), name
    pred = tmp_path / "pred"
    assert main(["predict", "--config", str(cfg), "--model", str(out), "--out", str(pred)]) == 0
    a = tio.read_grid_binary(out / "prediction.bin")
    b = tio.read_grid_binary(pred / "prediction.bin")
    assert_array_equal(a[2], b[2])
    assert_array_equal(a[3], b[3])
    tg = tmp_path / "t.csv"
    tg.write_text("x,y\n0.5,0.5\n0.1,0.9\n")
    assert main(["predict", "--model", str(out), "--targets", str(tg), "--out", str(pred)]) == 0
    assert len((pred / "prediction.csv").read_text().splitlines()) == 3


def test_simulate_command(small_cfg, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(small_cfg), "--out", str(out),
                 "--experiment", "nonstat-matern"]) == 0
    pts, vals = tio.read_points_csv(out / "samples.csv")
    assert pts.shape == (300, 2)
    for name in ("a1", "a2", "angle", "nu"):
        assert (out / f"param_{name}.pgm").exists()
    m = tio.read_json(out / "manifest.json")
    assert m["config"]["experiment"] == "nonstat-matern"


def test_empty_basis_degenerates_to_tapering(experiment_dir, tmp_path):
    pts, vals = tio.read_points_csv(experiment_dir / "samples.csv")
    cfg = RunConfig(basis_families=(), grid_nx=8, grid_ny=8, taper_range=0.08,
                    figures=False, out=str(tmp_path))
    m = run_pipeline(cfg, pts, vals)
    assert "first_pass" not in m["fit"]
    _, _, mean, var = tio.read_grid_binary(tmp_path / "prediction.bin")
    assert np.all(np.isfinite(mean)) and np.all(var >= 0)
    assert tio.read_json(tmp_path / "model.json")["basis_family"] == []


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["experiment", "--config", str(bad)]) == 2
    assert main(["fit", "--out", str(tmp_path / "o")]) == 2
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 4
    csv = tmp_path / "broken.csv"
    csv.write_text("x,y,value\n0.1,0.2\n")
    assert main(["fit", "--input", str(csv), "--out", str(tmp_path / "o")]) == 4
    flat = tmp_path / "flat.csv"
    rng = np.random.default_rng(0)
    tio.write_points_csv(flat, rng.uniform(0, 1, (50, 2)), np.full(50, 3.0))
    assert main(["fit", "--input", str(flat), "--out", str(tmp_path / "o")]) == 3
    assert "step 1" in capsys.readouterr().err
    assert main(["score", "--pred", str(csv), "--truth", str(csv)]) == 4


def test_score_shape_mismatch(tmp_path):
    tio.write_grid_binary(tmp_path / "a.bin", 2, 2, np.zeros(4))
    tio.write_grid_binary(tmp_path / "b.bin", 4, 1, np.zeros(4))
    assert main(["score", "--pred", str(tmp_path / "a.bin"), "--truth",
                 str(tmp_path / "b.bin")]) == 4


def test_compute_mspe():
    t = np.random.default_rng(0).normal(size=(5, 4))
    assert compute_mspe(t, t) == 0.0
    assert_allclose(compute_mspe(t + 1, t), 1.0, rtol=1e-15)
    with pytest.raises(ValueError):
        compute_mspe(t, t.T)


def test_config_parsing(tmp_path):
    v = parse_config_text("taper-range = 0.1  # comment\nbasis_ranges = 0.5, 0.3\n"
                          "filter_nugget = yes\nmax_lag = none\n")
    assert v == {"taper_range": 0.1, "basis_ranges": (0.5, 0.3), "filter_nugget": True,
                 "max_lag": None}
    for text in ("taper_range 0.1\n", "seed = x\n", "figures = maybe\n", "_RUNTIME = 1\n"):
        with pytest.raises(ConfigError):
            parse_config_text(text)
    for kw in ({"taper_range": 0.0}, {"experiment": "other"}, {"remaining_variance": "x"},
               {"input": "a.csv", "experiment": "nested"}, {"bounds": (0, 1, 1, 0)},
               {"cv_folds": 1}, {"basis_families": ("exponential",)}):
        with pytest.raises(ConfigError):
            load_config(None, **kw)
    cfg = load_config(None, seed=4)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"config": cfg.record()}))
    assert load_config(str(path)) == load_config(None, seed=4)
    path.write_text("{}")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_manifest_rerun_is_byte_identical(experiment_dir, tmp_path):
    out = tmp_path / "again"
    assert main(["experiment", "--config", str(experiment_dir / "manifest.json"),
                 "--out", str(out)]) == 0
    names = sorted(os.listdir(experiment_dir))
    assert names == sorted(os.listdir(out))
    for name in names:
        if name != "timings.json":
            assert (experiment_dir / name).read_bytes() == (out / name).read_bytes(), name
