"""Run-config validation and the command-line pipeline."""

import json
from pathlib import Path

import numpy as np
import pytest

from pdeid.cli import main
from pdeid.config import build_run_config, load_run_config, parse_override
from pdeid.data import (PointDataset, ProblemDomain, load_grid, load_points,
                        save_points)
from pdeid.errors import ConfigError
from pdeid.solvers import wave_analytic
from pdeid.terms import Library, parse_term, save_library
from pdeid.training import parse_report

DOMAIN = ProblemDomain(1.0, (-1.0,), (1.0,))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config directory with a tiny dataset, library, and run configs."""
    root = tmp_path_factory.mktemp("ws")
    rng = np.random.default_rng(0)
    coords = np.stack([rng.uniform(0.05, 1, 50),
                       rng.uniform(-1, 1, 50)], axis=1)
    save_points(PointDataset(coords, 2.0 * coords[:, 1], DOMAIN),
                root / "tiny_train.csv")
    tc = np.stack([rng.uniform(0.05, 1, 10), rng.uniform(-1, 1, 10)], axis=1)
    save_points(PointDataset(tc, 2.0 * tc[:, 1], DOMAIN, role="test"),
                root / "tiny_test.csv")
    save_points(PointDataset(coords, np.zeros(50), DOMAIN),
                root / "zero_train.csv")
    save_library(Library(parse_term("D_t U"),
                         [parse_term("D_x U"), parse_term("U")],
                         name="mini"), root / "minilib.toml")
    (root / "good.toml").write_text("""\
[run]
library = "minilib.toml"
out_dir = "run_out"
n_random_coll = 15
seed = 1

[[dataset]]
train = "tiny_train.csv"
test = "tiny_test.csv"
hidden = [6]
colloc_seed = 2

[phases.burn_in]
epochs = 20
[phases.sparsification]
epochs = 5
w_lp = 1e-3
[phases.fine_tune]
epochs = 5
""")
    (root / "zero.toml").write_text("""\
[run]
library = "minilib.toml"
out_dir = "zero_out"
n_random_coll = 15
seed = 1

[[dataset]]
train = "zero_train.csv"
hidden = [6]
colloc_seed = 2

[phases.burn_in]
epochs = 10
[phases.sparsification]
epochs = 200
lr = 3e-4
w_lp = 1e-3
[phases.fine_tune]
epochs = 5
""")
    return root


class TestRunConfig:
    def test_good_config_with_defaults(self, workspace):
        cfg = load_run_config(workspace / "good.toml")
        assert cfg.p == 0.1 and cfg.delta == 1e-8
        assert cfg.prune_threshold == 5e-4
        assert cfg.n_random_coll == 15
        assert Path(cfg.library) == workspace / "minilib.toml"
        assert Path(cfg.out_dir) == workspace / "run_out"
        (spec,) = cfg.datasets
        assert spec.hidden == (6,)
        assert spec.net_seed == 1          # run seed + dataset index
        assert spec.colloc_seed == 2
        kinds = [ph.kind for ph in cfg.phases]
        assert kinds == ["burn-in", "sparsification", "fine-tune"]
        assert cfg.phases[1].w_lp == 1e-3
        assert cfg.phases[2].patience == 100

    def test_overrides(self, workspace):
        cfg = load_run_config(workspace / "good.toml", overrides=[
            "run.p=0.5", "phases.burn_in.epochs=7",
            "dataset.0.net_seed=42", "run.out_dir='elsewhere'"])
        assert cfg.p == 0.5
        assert cfg.phases[0].epochs == 7
        assert cfg.datasets[0].net_seed == 42
        assert Path(cfg.out_dir) == workspace / "elsewhere"

    def test_override_parsing(self):
        assert parse_override("run.p=0.5") == (["run", "p"], 0.5)
        assert parse_override("a.b=[1,2]") == (["a", "b"], [1, 2])
        assert parse_override("a.b=text") == (["a", "b"], "text")
        with pytest.raises(ConfigError):
            parse_override("no-equals")

    def test_collects_every_failure(self, workspace):
        doc = {
            "run": {"library": "nope.toml", "out_dir": "o", "p": 7.0,
                    "typo_key": 1},
            "dataset": [{"train": "missing.csv", "hidden": []}],
            "phases": {"burn_in": {"epochs": 0},
                       "sparsification": {"epochs": 5, "w_lp": 0.0},
                       "fine_tune": {"epochs": 5}},
        }
        with pytest.raises(ConfigError) as err:
            build_run_config(doc, base_dir=workspace)
        message = str(err.value)
        for expected in ("does not exist", "p must lie in (0, 2)",
                         "typo_key", "missing.csv", "hidden",
                         "at least one epoch", "w_lp > 0"):
            assert expected in message, f"missing complaint: {expected}"

    def test_burn_in_lp_weight_rejected(self, workspace):
        with pytest.raises(ConfigError, match="w_lp = 0"):
            load_run_config(workspace / "good.toml",
                            overrides=["phases.burn_in.w_lp=1e-4"])

    def test_missing_pieces(self, workspace):
        with pytest.raises(ConfigError, match=r"\[run\]"):
            build_run_config({}, base_dir=workspace)
        with pytest.raises(ConfigError, match="dataset"):
            build_run_config({"run": {"library": "minilib.toml",
                                      "out_dir": "o"},
                              "phases": {}}, base_dir=workspace)

    def test_digest_tracks_content(self, workspace):
        a = load_run_config(workspace / "good.toml")
        b = load_run_config(workspace / "good.toml")
        c = load_run_config(workspace / "good.toml",
                            overrides=["run.seed=9"])
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_missing_config_file(self, workspace):
        with pytest.raises(ConfigError, match="does not exist"):
            load_run_config(workspace / "absent.toml")


@pytest.fixture(scope="module")
def burgers_grid_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("grids") / "burgers.grid"
    assert main(["generate", "burgers", "--out", str(out)]) == 0
    return out


class TestGenerate:
    def test_burgers_grid_shape(self, burgers_grid_file, capsys):
        grid = load_grid(burgers_grid_file)
        assert len(grid.axes[0]) == 201 and len(grid.axes[1]) == 257

    def test_wave_points(self, tmp_path):
        out = tmp_path / "wave.csv"
        assert main(["generate", "wave", "--points", "40", "--seed", "1",
                     "--out", str(out)]) == 0
        data = load_points(out)
        assert data.n == 40 and data.role == "train"
        assert np.array_equal(data.values, wave_analytic(data.coords))

    def test_wave_requires_points(self, tmp_path, capsys):
        code = main(["generate", "wave", "--out", str(tmp_path / "w.csv")])
        assert code == 2
        assert "--points" in capsys.readouterr().err

    def test_unknown_equation_lists_names(self, tmp_path, capsys):
        code = main(["generate", "navier", "--out", str(tmp_path / "x")])
        assert code == 2
        err = capsys.readouterr().err
        for name in ("burgers", "kdv", "ks", "allen_cahn", "wave"):
            assert name in err

    def test_solver_override(self, tmp_path, capsys):
        out = tmp_path / "b.grid"
        assert main(["generate", "burgers", "--out", str(out),
                     "--set", "n_out_t=51"]) == 0
        assert len(load_grid(out).axes[0]) == 51


class TestCorrupt:
    def test_clean_subsample_matches_grid(self, burgers_grid_file, tmp_path):
        prefix = tmp_path / "b"
        assert main(["corrupt", str(burgers_grid_file), "-n", "100",
                     "-q", "0", "--out", str(prefix)]) == 0
        train = load_points(f"{prefix}_train.csv")
        grid = load_grid(burgers_grid_file)
        ti = np.searchsorted(grid.axes[0], train.coords[:, 0])
        xi = np.searchsorted(grid.axes[1], train.coords[:, 1])
        assert np.array_equal(train.values, grid.values[ti, xi])
        assert train.meta["q"] == 0.0 and train.meta["n"] == 100

    def test_split_sizes_with_noise(self, burgers_grid_file, tmp_path):
        prefix = tmp_path / "noisy"
        assert main(["corrupt", str(burgers_grid_file), "-n", "4000",
                     "-q", "0.5", "--out", str(prefix)]) == 0
        assert load_points(f"{prefix}_train.csv").n == 4000
        assert load_points(f"{prefix}_test.csv").n == 800

    def test_reruns_byte_identical(self, burgers_grid_file, tmp_path):
        args = ["corrupt", str(burgers_grid_file), "-n", "60", "-q", "0.25",
                "--sample-seed", "3", "--noise-seed", "4"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        for part in ("train", "test"):
            assert (tmp_path / f"a_{part}.csv").read_bytes() == \
                (tmp_path / f"b_{part}.csv").read_bytes()

    def test_points_source(self, tmp_path):
        src = tmp_path / "wave.csv"
        assert main(["generate", "wave", "--points", "50", "--seed", "2",
                     "--out", str(src)]) == 0
        assert main(["corrupt", str(src), "-n", "30", "-q", "0",
                     "--out", str(tmp_path / "w")]) == 0
        assert load_points(tmp_path / "w_train.csv").n == 30

    def test_oversized_draw(self, burgers_grid_file, tmp_path, capsys):
        code = main(["corrupt", str(burgers_grid_file), "-n", "51657",
                     "--out", str(tmp_path / "x")])
        assert code == 2
        assert "51657" in capsys.readouterr().err


class TestTrainCommand:
    def test_end_to_end_run_dir(self, workspace, capsys):
        assert main(["train", str(workspace / "good.toml")]) == 0
        out = workspace / "run_out"
        text = (out / "identified_pde.txt").read_text().strip()
        lhs, terms = parse_report(text)
        assert lhs == parse_term("D_t U") and terms
        assert text in capsys.readouterr().out
        assert (out / "run_config.toml").read_bytes() == \
            (workspace / "good.toml").read_bytes()
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["net_seeds"] == [1] and meta["colloc_seeds"] == [2]
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == ("epoch,data_loss_0,coll_loss_0,"
                              "lp_value,lp_metric,n_active")
        assert len(history) == 1 + 30
        assert (out / "test_history.csv").is_file()
        xi_rows = (out / "xi_history.csv").read_text().splitlines()
        assert xi_rows[0] == "epoch,xi_0,xi_1,active_0,active_1"
        for phase in range(3):
            assert (out / f"checkpoint_phase{phase}_net0.json").is_file()
        prov = json.loads((out / "provenance.json").read_text())
        assert prov["phase_epochs"] == [20, 5, 5]

    def test_rerun_is_deterministic(self, workspace):
        assert main(["train", str(workspace / "good.toml"),
                     "--set", "run.out_dir='det_a'"]) == 0
        assert main(["train", str(workspace / "good.toml"),
                     "--set", "run.out_dir='det_b'"]) == 0
        for name in ("identified_pde.txt", "history.csv", "xi_history.csv"):
            assert (workspace / "det_a" / name).read_bytes() == \
                (workspace / "det_b" / name).read_bytes()

    def test_validation_failure_exits_2(self, workspace, capsys):
        code = main(["train", str(workspace / "good.toml"),
                     "--set", "phases.burn_in.w_lp=0.1"])
        assert code == 2
        assert "w_lp" in capsys.readouterr().err

    def test_zero_data_exits_4(self, workspace, capsys):
        code = main(["train", str(workspace / "zero.toml")])
        assert code == 4
        assert "empty PDE" in capsys.readouterr().err
        # failure still leaves the history on disk for diagnosis
        assert (workspace / "zero_out" / "history.csv").is_file()

    def test_emit_plot_data(self, workspace):
        assert main(["train", str(workspace / "good.toml"),
                     "--set", "run.out_dir='plot_run'",
                     "--emit-plot-data"]) == 0
        rows = np.loadtxt(workspace / "plot_run" / "plot_data_net0.csv",
                          delimiter=",", skiprows=1)
        assert rows.shape == (41 * 41, 4)
        header = (workspace / "plot_run" /
                  "plot_data_net0.csv").read_text().splitlines()[0]
        assert header == "t,x,u,residual"


class TestReportCommand:
    def test_pretty_print_run_dir(self, workspace, capsys):
        assert main(["train", str(workspace / "good.toml"),
                     "--set", "run.out_dir='rep_run'"]) == 0
        capsys.readouterr()
        assert main(["report", str(workspace / "rep_run")]) == 0
        out = capsys.readouterr().out
        assert "D_t U = " in out and "active term" in out

    def test_missing_report(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "nowhere")]) == 2
