import json
import re

import numpy as np
import pytest

from rntc.cli import main
from rntc.config import RunConfig
from rntc.dataset import read_dataset, write_dataset
from rntc.errors import ConfigError
from rntc.neural.checkpoint import load_checkpoint
from rntc.plots import line_plot, scatter_plot

# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys_and_sections():
    with pytest.raises(ConfigError):
        RunConfig.from_text("[run]\nsaele = desk\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[mpc]\nslack_wieght = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[plots]\nx = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[run]\nscale = huge\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("[train]\nlr = fast\n")


def test_config_parsing_and_override():
    cfg = RunConfig.from_text("[run]\nscale = desk\nseed = 4\n[mpc]\nQ = 2,2,0.5\nslack_weight = 100\n"
                              "[train]\nepochs = 3\n[benchmark]\nmodes = sdf, none\n")
    assert cfg.seed == 4
    assert cfg.mpc_kwargs() == {"Q": [2.0, 2.0, 0.5], "slack_weight": 100.0}
    assert cfg.bench("modes") == ["sdf", "none"] and cfg.bench("horizons") == [5, 10, 15, 20]
    assert cfg.train_config("ntc").epochs == 3 and cfg.train_config("ntc").mode == "ntc"
    over = cfg.override(seed=9, **{"benchmark.horizons": "5"})
    assert over.seed == 9 and over.bench("horizons") == [5] and cfg.seed == 4
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_hash_ignores_workers():
    a = RunConfig(workers=1)
    assert a.hash() == RunConfig(workers=4).hash() != RunConfig(seed=1).hash()


# ---------------------------------------------------------------- plots


def test_svg_deterministic():
    s = {"sdf": ([5, 10], [0.5, 0.7]), "rntc": ([5, 10], [0.8, float("nan")])}
    assert line_plot(s, "t", "x", "y") == line_plot(s, "t", "x", "y")
    assert line_plot(s).startswith("<svg")


def test_scatter_one_marker_per_point():
    pts = [("sdf", 20.0, 0.5), ("sdf", 22.0, 0.7), ("rntc", 21.0, 0.8), ("none", float("nan"), 0.0)]
    svg = scatter_plot(pts, "p", "x", "y")
    assert svg.count("<circle") == 4 and svg.count('fill="none" stroke') == 1


# ---------------------------------------------------------------- commands


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "data.bin"
    assert main(["gen-data", "--scale", "desk", "--count", "12", "--seed", "2", "--workers", "1",
                 "--out", str(out)]) == 0
    return out


def test_gen_data_count_and_determinism(desk_data, tmp_path):
    data = read_dataset(desk_data)
    assert len(data) == 12
    assert data.geometry.scale == "desk"
    again = tmp_path / "again.bin"
    assert main(["gen-data", "--scale", "desk", "--count", "12", "--seed", "2", "--workers", "1",
                 "--out", str(again)]) == 0
    assert again.read_bytes() == desk_data.read_bytes()
    echo = (desk_data.parent / "data.bin.config.ini").read_text()
    assert echo.startswith("# config_hash=")


@pytest.fixture(scope="module")
def trained(desk_data):
    out = desk_data.parent / "rntc.ckpt"
    assert main(["train", "--scale", "desk", "--data", str(desk_data), "--mode", "rntc",
                 "--epochs", "10", "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    hist = trained.parent / "rntc.ckpt.history.csv"
    lines = [ln for ln in hist.read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 1 + 10
    assert hist.read_text().startswith("# config_hash=")
    ck = load_checkpoint(trained)
    assert ck.mode == "rntc" and ck.meta["config_hash"]


def test_train_deterministic_and_ntc_mode(desk_data, trained, tmp_path):
    again = tmp_path / "again.ckpt"
    assert main(["train", "--scale", "desk", "--data", str(desk_data), "--mode", "rntc",
                 "--epochs", "10", "--out", str(again)]) == 0
    assert again.read_bytes() == trained.read_bytes()
    ntc = tmp_path / "ntc.ckpt"
    assert main(["train", "--scale", "desk", "--data", str(desk_data), "--mode", "ntc",
                 "--epochs", "2", "--out", str(ntc)]) == 0
    assert load_checkpoint(ntc).mode == "ntc"


def test_train_geometry_mismatch(desk_data, tmp_path):
    assert main(["train", "--scale", "paper", "--data", str(desk_data), "--epochs", "1",
                 "--out", str(tmp_path / "x.ckpt")]) == 2


def test_eval_model_rntc_no_violations(trained, desk_data, tmp_path, capsys):
    out = tmp_path / "metrics.csv"
    assert main(["eval-model", "--checkpoint", str(trained), "--data", str(desk_data),
                 "--out", str(out)]) == 0
    rows = [ln.split(",") for ln in out.read_text().splitlines() if not ln.startswith("#")][1:]
    assert len(rows) == 12
    assert all(int(r[3]) == 0 for r in rows)
    assert "dominance_violations total 0" in capsys.readouterr().out


def test_overfit_iou(desk_data, tmp_path, capsys):
    # a few pairs trained far past convergence are recovered almost exactly
    ckpt = tmp_path / "fit.ckpt"
    cfg = tmp_path / "fit.ini"
    cfg.write_text("[train]\nbatch_size = 4\n")
    assert main(["train", "--config", str(cfg), "--scale", "desk", "--data", str(desk_data),
                 "--epochs", "60", "--out", str(ckpt)]) == 0
    out = tmp_path / "m.csv"
    assert main(["eval-model", "--checkpoint", str(ckpt), "--data", str(desk_data),
                 "--out", str(out)]) == 0
    mean = float(re.search(r"iou ([0-9.]+)", capsys.readouterr().out).group(1))
    assert mean >= 0.95


def test_numerical_failure_exit_code(desk_data, tmp_path):
    data = read_dataset(desk_data)
    for p in data.pairs:
        p.sdf_pair = np.full_like(p.sdf_pair, np.nan)
    bad = tmp_path / "nan.bin"
    write_dataset(bad, data)
    assert main(["train", "--scale", "desk", "--data", str(bad), "--epochs", "1",
                 "--out", str(tmp_path / "x.ckpt")]) == 4


def test_hj_solve_empty_and_static(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"obstacles": [], "horizon": 2.0}))
    out = tmp_path / "v.npy"
    assert main(["hj-solve", "--scale", "desk", "--scenario-json", str(empty), "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "v.npy.json").read_text())
    assert summary["safe_fraction"] == 1.0 and summary["converged"]

    static = tmp_path / "static.json"
    static.write_text(json.dumps({"obstacles": [{"center": [0.4, -0.3], "radius": 0.5}],
                                  "horizon": 4.0}))
    a, b = tmp_path / "a.npy", tmp_path / "b.npy"
    assert main(["hj-solve", "--scale", "desk", "--scenario-json", str(static), "--out", str(a)]) == 0
    assert main(["hj-solve", "--scale", "desk", "--scenario-json", str(static), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    from rntc.geometry import Obstacle, make_snapshot
    from rntc.hj import failure_from_snapshot
    from rntc.scales import get_scale
    grid = get_scale("desk").grid
    F = failure_from_snapshot(make_snapshot([Obstacle((0.4, -0.3), 0.5)]), grid)(0.0)
    V = np.load(a)
    interior = np.zeros(F.shape, bool)
    interior[6:-6, 6:-6] = True
    assert np.abs(V - F[..., None])[interior].max() <= 0.15


def test_benchmark_and_report(tmp_path):
    res = tmp_path / "res"
    args = ["benchmark", "--modes", "none,sdf", "--horizons", "5", "--scenarios", "2",
            "--workers", "1", "--out-dir", str(res)]
    assert main(args) == 0
    text = (res / "results.csv").read_text()
    assert "# scenario_hash=" in text and "# config_hash=" in text
    assert (res / "benchmark.config.ini").exists()
    figs = tmp_path / "figs"
    assert main(["report", "--in-dir", str(res), "--out-dir", str(figs)]) == 0
    first = {p.name: p.read_bytes() for p in figs.iterdir()}
    assert set(first) == {"success_rate.svg", "opt_time.svg", "travel_time.svg", "pareto.svg",
                          "summary.csv"}
    assert first["pareto.svg"].count(b"<circle") == 2
    assert main(["report", "--in-dir", str(res), "--out-dir", str(figs)]) == 0
    assert {p.name: p.read_bytes() for p in figs.iterdir()} == first


def test_error_exit_codes(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", "--in-dir", str(empty)]) == 3
    assert main(["benchmark", "--modes", "rntc", "--horizons", "5", "--out-dir", str(tmp_path)]) == 2
    assert main(["benchmark", "--modes", "warp", "--horizons", "5", "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nnope = 1\n")
    assert main(["gen-data", "--config", str(bad), "--count", "1", "--out", str(tmp_path / "d")]) == 2
    assert main(["eval-model", "--checkpoint", str(tmp_path / "none.ckpt"), "--data",
                 str(tmp_path / "none.bin"), "--out", str(tmp_path / "m.csv")]) == 3
    assert main(["gen-data", "--scale", "desk", "--count", "1",
                 "--out", str(tmp_path / "missing" / "d.bin")]) == 3
