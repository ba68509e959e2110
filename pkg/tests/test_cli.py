"""End-to-end command-line tests: every subcommand parses and runs against
tiny inputs in a temp directory."""

import json

import pytest

from dbrf import cli
from dbrf import data as D

TINY_CFG = dict(epochs=2, folds=1, d_z=3, d_b=2, hidden=8, vae_epochs=2,
                downstream_epochs=25, downstream_lr=5e-2,
                rho_values=[0.1], methods=["raw_lr"])


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY_CFG))
    return str(path)


@pytest.fixture
def dump_path(tmp_path):
    ds = D.generate_synthetic(D.SyntheticSpec(n=300, seed=3))
    path = str(tmp_path / "synth.npz")
    D.dump_dataset(ds, path)
    return path


def run(argv):
    return cli.main(argv)


class TestParser:
    def test_no_command_exits(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["frobnicate"])

    @pytest.mark.parametrize("argv", [
        ["synth", "--out", "x.npz"],
        ["train", "--config", "c.json"],
        ["sweep", "--out-dir", "o"],
        ["ablate", "--out-dir", "o"],
        ["grid", "--out-dir", "o"],
        ["project", "--checkpoint", "m.npz", "--out-dir", "o"],
        ["metrics", "--data", "d.npz"],
        ["prepare", "--schema", "adult", "--out", "d.npz"],
    ])
    def test_subcommands_parse(self, argv):
        args = cli.build_parser().parse_args(argv)
        assert callable(args.fn)


class TestConfigLoading:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"epochs": 3, "momentum": 0.9}))
        args = cli.build_parser().parse_args(
            ["sweep", "--config", str(path), "--out-dir", str(tmp_path)])
        with pytest.raises(SystemExit, match="momentum"):
            cli._load_config(args)

    def test_flags_override_file(self, cfg_path, tmp_path):
        args = cli.build_parser().parse_args(
            ["sweep", "--config", cfg_path, "--rho", "0.3",
             "--method", "vae_lr", "--folds", "2", "--seed", "7",
             "--out-dir", str(tmp_path)])
        cfg = cli._load_config(args)
        assert cfg.rho_values == (0.3,)
        assert cfg.methods == ("vae_lr",)
        assert cfg.folds == 2
        assert cfg.seed == 7
        assert cfg.epochs == 2  # from the file

    def test_defaults_without_config(self):
        args = cli.build_parser().parse_args(["sweep", "--out-dir", "o"])
        cfg = cli._load_config(args)
        assert cfg.dataset == "synthetic"


class TestSynthAndMetrics:
    def test_synth_writes_dump(self, tmp_path, capsys):
        out = str(tmp_path / "d.npz")
        assert run(["synth", "--out", out, "--n", "200", "--seed", "1"]) == 0
        assert "200 rows" in capsys.readouterr().out
        ds = D.load_dump(out)
        assert ds.n == 200
        assert (ds.observed_labels == ds.ideal_labels).all()

    def test_synth_with_rho_flips_labels(self, tmp_path):
        out = str(tmp_path / "d.npz")
        run(["synth", "--out", out, "--n", "400", "--rho", "0.3"])
        ds = D.load_dump(out)
        assert (ds.observed_labels != ds.ideal_labels).any()

    def test_metrics_report(self, dump_path, tmp_path, capsys):
        report_csv = str(tmp_path / "report.csv")
        assert run(["metrics", "--data", dump_path, "--out", report_csv]) == 0
        out = capsys.readouterr().out
        assert "clean-label delta_dp" in out
        assert (tmp_path / "report.csv").read_text().startswith("group")


class TestPrepare:
    def test_prepare_with_schema_file_and_input(self, tmp_path, capsys):
        schema = {
            "name": "toy",
            "has_header": True,
            "file_columns": ["age", "color", "sex", "outcome"],
            "missing_values": ["?"],
            "label": {"column": "outcome", "positive_values": ["yes"],
                      "negative_values": ["no"]},
            "sensitive": [{"name": "female", "column": "sex",
                           "positive_values": ["F"]}],
            "features": [{"name": "age", "kind": "continuous"},
                         {"name": "color", "kind": "categorical",
                          "groups": {"warm": ["red"], "cool": ["blue"]}}],
        }
        spath = tmp_path / "toy.json"
        spath.write_text(json.dumps(schema))
        raw = tmp_path / "toy.csv"
        raw.write_text("age,color,sex,outcome\n"
                       "30,red,F,yes\n41,blue,M,no\n25,red,M,yes\n"
                       "37,blue,F,no\n52,red,F,yes\n")
        out = str(tmp_path / "toy.npz")
        assert run(["prepare", "--schema", str(spath), "--input", str(raw),
                    "--out", out]) == 0
        assert "5 rows" in capsys.readouterr().out
        ds = D.load_dump(out)
        assert ds.n == 5

    def test_prepare_missing_default_errors(self, tmp_path):
        schema = {"name": "toy", "has_header": True, "file_columns": ["a", "y"],
                  "label": {"column": "y", "positive_values": ["1"],
                            "negative_values": ["0"]},
                  "sensitive": [{"name": "g", "column": "a",
                                 "positive_values": ["x"]}],
                  "features": [{"name": "a", "kind": "categorical",
                                "groups": {"g1": ["x"], "g2": ["y"]}}]}
        spath = tmp_path / "toy.json"
        spath.write_text(json.dumps(schema))
        with pytest.raises(SystemExit, match="default_file"):
            run(["prepare", "--schema", str(spath), "--out",
                 str(tmp_path / "o.npz")])


class TestTrain:
    def test_train_writes_history_and_checkpoint(self, cfg_path, dump_path,
                                                 tmp_path, capsys):
        hist = str(tmp_path / "hist.csv")
        ckpt = str(tmp_path / "model.npz")
        code = run(["train", "--config", cfg_path, "--data", dump_path,
                    "--rho", "0.2", "--history", hist, "--checkpoint", ckpt,
                    "--eval-every", "1"])
        assert code == 0
        assert "acc_ideal" in capsys.readouterr().out
        header = open(hist).readline().strip().split(",")
        assert header[:3] == ["epoch", "recon_x", "recon_a"]
        assert (tmp_path / "model.npz").exists()


class TestSweepCommand:
    def test_sweep_smoke(self, cfg_path, dump_path, tmp_path, capsys):
        out_dir = str(tmp_path / "run")
        code = run(["sweep", "--config", cfg_path, "--data", dump_path,
                    "--out-dir", out_dir])
        assert code == 0
        assert "1/1 cells completed" in capsys.readouterr().out
        assert (tmp_path / "run" / "results.csv").exists()

    def test_sweep_failure_exit_code(self, tmp_path, dump_path, capsys):
        cfg = dict(TINY_CFG, batch_size=100_000, methods=["dbrf_star"])
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        code = run(["sweep", "--config", str(path), "--data", dump_path,
                    "--out-dir", str(tmp_path / "run")])
        assert code != 0
        assert "cell failed" in capsys.readouterr().err


class TestAblateAndGrid:
    def test_ablate_smoke(self, cfg_path, dump_path, tmp_path, capsys):
        code = run(["ablate", "--config", cfg_path, "--data", dump_path,
                    "--rho", "0.1", "--out-dir", str(tmp_path / "ab")])
        assert code == 0
        out = capsys.readouterr().out
        assert "full" in out and "dbvae_only" in out
        assert (tmp_path / "ab" / "ablation.csv").exists()


class TestProjectCommand:
    def test_project_from_checkpoint(self, cfg_path, dump_path, tmp_path,
                                     capsys):
        ckpt = str(tmp_path / "model.npz")
        run(["train", "--config", cfg_path, "--data", dump_path,
             "--checkpoint", ckpt])
        capsys.readouterr()
        code = run(["project", "--checkpoint", ckpt, "--data", dump_path,
                    "--out-dir", str(tmp_path / "proj")])
        assert code == 0
        out = capsys.readouterr().out
        assert "group separation in x" in out
        assert "group separation in z" in out
        assert (tmp_path / "proj" / "projection_z.svg").exists()
