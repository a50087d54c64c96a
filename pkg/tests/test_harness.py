import csv
import hashlib
import json
import os
import struct

import numpy as np
import pytest

from funcp.cli import build_parser, main
from funcp.errors import ExperimentError, FormatError, InvalidArgumentError
from funcp.grid import Field, Grid, make_grid
from funcp.harness import load_config, read_dataset, read_operators, run_experiment, write_dataset, write_operators
from funcp.harness.config import OUTPUT_ROOT_ENV, PROFILES
from funcp.harness.experiments import Table, stage, table_bytes
from funcp.harness.problems import SPLIT_OFFSETS, make_problem
from funcp.surrogates import SpectralOperator

from helpers import TINY, tiny_config


def _flags(name):
    out = ["--experiment", name]
    for dotted, v in TINY[name].items():
        section, key = dotted.split(".")
        out += [f"--{section}-{key.replace('_', '-')}", str(v)]
    return out


# --------------------------------------------------------------------------- config


def test_profile_defaults():
    cfg = load_config(overrides={"run.experiment": "darcy_mc"})
    assert cfg.data.resolution == 256 and cfg.surrogate.modes == 16
    cfg = load_config()
    assert cfg.run.experiment == "poisson_quantile" and cfg.data.resolution == 32
    assert cfg.run.alpha == 0.1


def test_config_file_and_override_precedence(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nexperiment = grid_ablation\nseed = 4\n[data]\nn_cal = 7\n")
    cfg = load_config(path, {"data.n_cal": "9"})
    assert cfg.run.seed == 4
    assert cfg.data.n_cal == 9
    assert cfg.data.resolution == PROFILES["grid_ablation"]["data.resolution"]


@pytest.mark.parametrize(
    "text",
    ["[run]\nbogus = 1\n", "[nowhere]\nx = 1\n", "[run]\nseed = abc\n", "[run]\nalpha = 1.5\n", "garbage"],
)
def test_config_rejects_bad_files(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(InvalidArgumentError):
        load_config(path)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        load_config(overrides={"run.experiment": "nope"})
    with pytest.raises(InvalidArgumentError):
        load_config(overrides={"forecast.cal_trajectories": 20})
    with pytest.raises(InvalidArgumentError):
        load_config(overrides={"run.experiment": "superres", "sweep.cal_resolutions": "16 24"})
    with pytest.raises(InvalidArgumentError):
        load_config(overrides={"run.experiment": "superres", "sweep.cal_resolutions": "40"})


def test_config_hash_ignores_output_dir():
    a = load_config(overrides={"run.out": "a"})
    b = load_config(overrides={"run.out": "b"})
    assert a.config_hash == b.config_hash
    assert a.config_hash != a.replace(run__seed=1).config_hash


def test_output_root_from_environment(monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, "/tmp/somewhere")
    assert load_config().output_dir() == os.path.join("/tmp/somewhere", "poisson_quantile")
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert load_config().output_dir() == os.path.join("results", "poisson_quantile")


def test_cli_has_flag_for_every_key():
    help_text = build_parser()._subparsers._group_actions[0].choices["report"].format_help()
    for flag in ("--data-n-train", "--surrogate-q-lo", "--forecast-model-viscosity-factor", "--sweep-cal-resolutions"):
        assert flag in help_text


# --------------------------------------------------------------------------- file formats


def _pairs(grid, n, seed=0):
    rng = np.random.default_rng(seed)
    return [(Field(grid, rng.normal(size=grid.size)), Field(grid, rng.normal(size=grid.size))) for _ in range(n)]


@pytest.mark.parametrize("kind", ["uniform", "center", "boundary"])
def test_dataset_round_trip(tmp_path, kind):
    g = make_grid(kind, (4, 3))
    pairs = _pairs(g, 5)
    path = tmp_path / "d.fcpd"
    write_dataset(path, g, pairs)
    g2, back = read_dataset(path)
    assert g2 == g
    for (x, y), (x2, y2) in zip(pairs, back):
        np.testing.assert_array_equal(x.values, x2.values)
        np.testing.assert_array_equal(y.values, y2.values)
    assert os.path.getsize(path) == 4 + 4 + 1 + 16 + 1 + 8 + 5 * 2 * 12 * 8


def test_dataset_explicit_edges(tmp_path):
    g = Grid(([0.0, 0.1, 0.7, 1.0],))
    path = tmp_path / "e.fcpd"
    write_dataset(path, g, _pairs(g, 2))
    g2, back = read_dataset(path)
    np.testing.assert_array_equal(g2.edges[0], g.edges[0])
    assert len(back) == 2


def test_dataset_header_layout(tmp_path):
    g = make_grid("boundary", 2)
    path = tmp_path / "h.fcpd"
    write_dataset(path, g, [(Field(g, [1.0, 2.0]), Field(g, [3.0, 4.0]))])
    raw = path.read_bytes()
    assert raw[:4] == b"FCPD"
    assert struct.unpack_from("<IBQB", raw, 4) == (1, 1, 2, 2)
    assert struct.unpack_from("<Q4d", raw, 18) == (1, 1.0, 2.0, 3.0, 4.0)


def test_dataset_truncation_and_corruption(tmp_path):
    g = make_grid("uniform", 4)
    path = tmp_path / "t.fcpd"
    write_dataset(path, g, _pairs(g, 3))
    raw = path.read_bytes()
    (tmp_path / "short.fcpd").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="offset"):
        read_dataset(tmp_path / "short.fcpd")
    (tmp_path / "head.fcpd").write_bytes(raw[:10])
    with pytest.raises(FormatError, match="truncated"):
        read_dataset(tmp_path / "head.fcpd")
    (tmp_path / "magic.fcpd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError) as info:
        read_dataset(tmp_path / "magic.fcpd")
    assert info.value.offset == 0
    (tmp_path / "ver.fcpd").write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(FormatError) as info:
        read_dataset(tmp_path / "ver.fcpd")
    assert info.value.offset == 4
    (tmp_path / "long.fcpd").write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        read_dataset(tmp_path / "long.fcpd")


def test_dataset_write_rejects_foreign_grid(tmp_path):
    g = make_grid("uniform", 4)
    bad = [(Field(g, np.ones(4)), Field(make_grid("center", 4), np.ones(4)))]
    with pytest.raises(InvalidArgumentError):
        write_dataset(tmp_path / "x.fcpd", g, bad)
    assert not (tmp_path / "x.fcpd").exists()


def test_operator_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ops = [
        SpectralOperator(2, 3, rng.normal(size=(25, 25)), rng.normal(size=25), 1e-8, 0.5),
        SpectralOperator(1, 2, rng.normal(size=(3, 3)), np.zeros(3)),
    ]
    path = tmp_path / "o.fcpo"
    write_operators(path, ops)
    back = read_operators(path)
    assert len(back) == 2
    for a, b in zip(ops, back):
        assert (a.dim, a.modes, a.ridge) == (b.dim, b.modes, b.ridge)
        np.testing.assert_array_equal(a.coef, b.coef)
        np.testing.assert_array_equal(a.bias, b.bias)
    assert np.isnan(back[1].train_residual)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(FormatError):
        read_operators(path)


# --------------------------------------------------------------------------- problems and drivers


def test_split_indices_stable():
    p = make_problem("poisson", 0)
    g = p.grid(8)
    a = p.dataset(g, "cal", 3)
    b = p.dataset(g, "cal", 5)
    np.testing.assert_array_equal(a[2][0].values, b[2][0].values)
    assert SPLIT_OFFSETS["cal"] != SPLIT_OFFSETS["test"]
    with pytest.raises(InvalidArgumentError):
        p.dataset(g, "dev", 1)


def test_darcy_lift_round_trip():
    p = make_problem("darcy", 0)
    g = p.grid(16)
    x, y = p.sample(g, 0)
    np.testing.assert_allclose(p.unlift(p.lift(y).values, g), y.values)
    np.testing.assert_allclose(np.exp(p.encode(x).values), x.values)


def test_stage_wraps_errors():
    with pytest.raises(ExperimentError) as info:
        with stage("fit"):
            raise ZeroDivisionError("boom")
    assert info.value.stage == "fit"
    assert str(info.value).startswith("[fit]")


def test_table_csv_format():
    t = Table("x", ("a", "b", "c", "d"), ((0.1, True, None, 3),))
    assert table_bytes(t) == b"a,b,c,d\n0.1,yes,,3\n"


@pytest.mark.parametrize("name", sorted(TINY))
def test_experiment_runs_and_is_deterministic(tmp_path, name):
    cfg = tiny_config(name, tmp_path / "a")
    res = run_experiment(cfg)
    assert res.files
    again = run_experiment(cfg.replace(run__out=str(tmp_path / "b")))
    for table, path in res.files.items():
        with open(path, "rb") as fh, open(again.files[table], "rb") as gh:
            assert fh.read() == gh.read(), table
    with open(os.path.join(res.out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["config_hash"] == cfg.config_hash
    assert manifest["seed"] == 0
    assert {e["file"] for e in manifest["files"]} == {os.path.basename(p) for p in res.files.values()}


def test_poisson_quantile_tables(tmp_path):
    res = run_experiment(tiny_config("poisson_quantile", tmp_path))
    cov = res.tables["poisson_coverage"]
    calibrated = [r for r in cov.rows if r[0] == "calibrated"]
    assert calibrated
    tau = float(res.tables["calibration"].column("tau")[0])
    assert 0 < tau < 1


def test_ns_forecast_tables(tmp_path):
    res = run_experiment(tiny_config("ns_forecast", tmp_path))
    m = res.tables["forecast_metrics"]
    assert m.columns == ("metric", "t=1", "t=2", "t=3")
    ces, md, sp = m.row("ces")[1:], m.row("mean_distance")[1:], m.row("spread")[1:]
    np.testing.assert_allclose(ces, np.add(md, sp), rtol=1e-12)


# --------------------------------------------------------------------------- CLI


def test_cli_staged_pipeline(tmp_path, capsys):
    out = str(tmp_path)
    base = _flags("poisson_quantile") + ["--out", out]
    for cmd in ("generate", "fit", "calibrate", "evaluate"):
        assert main([cmd] + base) == 0, cmd
    printed = capsys.readouterr().out.split()
    for f in ("train.fcpd", "cal.fcpd", "test.fcpd", "operator.fcpo", "calibration.csv", "evaluation.csv"):
        assert os.path.join(out, f) in printed
    assert len(read_operators(os.path.join(out, "operator.fcpo"))) == 3
    with open(os.path.join(out, "evaluation.csv"), newline="") as fh:
        row = next(csv.DictReader(fh))
    assert 0.0 <= float(row["functional"]) <= 1.0
    with open(os.path.join(out, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["commands"] == ["generate", "fit", "calibrate", "evaluate"]
    assert len(manifest["files"]) == 6


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["report", "--experiment", "superres", "--sweep-cal-resolutions", "8 12", "--out", str(tmp_path)]) == 2
    assert main(["fit", "--experiment", "darcy_mc", "--out", str(tmp_path)]) == 1
    assert main(["sweep", "--experiment", "darcy_mc"]) == 2
    assert main(["generate", "--experiment", "superres", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "funcp" in err


def test_cli_unknown_flag_rejected():
    with pytest.raises(SystemExit) as info:
        main(["report", "--data-bogus", "1"])
    assert info.value.code == 2


def test_cli_forecast_command(tmp_path, capsys):
    assert main(["forecast"] + _flags("ns_forecast")[2:] + ["--out", str(tmp_path)]) == 0
    assert os.path.exists(tmp_path / "forecast_metrics.csv")


def test_grid_ablation_layout(tmp_path):
    t = run_experiment(tiny_config("grid_ablation", tmp_path)).tables["grid_thresholds"]
    assert t.columns == ("grid", "relative_norm", "weighted_norm")
    assert [r[0] for r in t.rows] == ["uniform", "center", "boundary", "std", "cv"]
    taus = np.array([r[2] for r in t.rows[:3]])
    assert t.row("std")[2] == pytest.approx(np.std(taus, ddof=1))
    assert t.row("cv")[2] == pytest.approx(np.std(taus, ddof=1) / np.mean(taus))


def test_darcy_zero_noise_degenerate_envelopes(tmp_path):
    res = run_experiment(tiny_config("darcy_mc", tmp_path, **{"surrogate.noise_scale": 0.0}))
    cov = res.tables["darcy_coverage"]
    for p in cov.column("pointwise"):
        assert p is not None and p < 0.05


def test_manifest_lists_every_table_with_hash(tmp_path):
    cfg = tiny_config("volume_ablation", tmp_path)
    res = run_experiment(cfg)
    with open(os.path.join(res.out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest["config_hash"] == cfg.config_hash
    assert manifest["versions"]["funcp"]
    for entry in manifest["files"]:
        with open(os.path.join(res.out_dir, entry["file"]), "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == entry["sha256"]
