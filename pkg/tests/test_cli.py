import csv
import json

import numpy as np
import pytest

from deepfosls.cli import eval_grid, main
from deepfosls.config import RunConfig, config_from_dict, load_config
from deepfosls.errors import ConfigError
from deepfosls.nn import load_checkpoint
from deepfosls.sampling import Box
from deepfosls.training import TrainHistory

FAST = ["--hidden", "6", "--N", "64", "--no-timing"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[0], list(csv.DictReader(lines[1:]))


class TestConfig:
    def test_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('seed = 3\n[problem]\nname = "example2"\neps = 0.1\n[train]\nsteps = 7\nlr0 = 0.005\n'
                        '[aux]\nmode = "trained"\nsteps = 50\n[main]\nhidden = [4, 4]\n')
        cfg = load_config(path)
        assert cfg.seed == 3 and cfg.train.seed == 3
        assert cfg.build_problem().params == {"eps": 0.1}
        assert cfg.train.steps == 7 and cfg.aux.mode == "trained" and cfg.aux.train.steps == 50
        assert cfg.main.hidden == [4, 4]

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.train.lr0 == 1e-2 and cfg.train.halve_every == 2500
        assert len(cfg.main.hidden) == 3 and cfg.aux.train.hidden == [10]

    @pytest.mark.parametrize("data,path", [
        ({"train": {"lr": 1.0}}, "train.lr"),
        ({"train": {"N": 0}}, "train.N"),
        ({"aux": {"mode": "guess"}}, "aux.mode"),
        ({"aux": {"mode": "from-checkpoint"}}, "aux.dir"),
        ({"problem": {"name": "example1", "eps": 0.1}}, "problem.eps"),
        ({"main": {"activation": "gelu"}}, "main.activation"),
        ({"colour": 1}, "colour"),
    ])
    def test_errors_name_the_field(self, data, path):
        with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
            config_from_dict(data)

    def test_hash_ignores_output_location(self):
        a = config_from_dict({"out": "x", "train": {"workers": 1}})
        b = config_from_dict({"out": "y", "train": {"workers": 4}})
        c = config_from_dict({"seed": 1})
        assert a.config_hash() == b.config_hash() != c.config_hash()


class TestSolve:
    def test_outputs_and_rerun(self, tmp_path, capsys):
        args = ["solve", "example1", "--dim", "2", "--k", "1", "--steps", "20", *FAST]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert "final_loss=" in capsys.readouterr().out
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("history.csv", "v.json", "psi.json", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        head, rows = read_csv(tmp_path / "a" / "history.csv")
        assert head.endswith("seed=0") and len(rows) == 20 and rows[0]["seconds"] == ""
        meta = json.loads((tmp_path / "a" / "v.meta.json").read_text())
        assert meta["seed"] == 0 and meta["config_hash"] in head
        assert load_checkpoint(tmp_path / "a" / "psi.json").widths == [2, 6, 2]

    def test_csv_values_roundtrip(self, tmp_path):
        assert main(["solve", "remark1d", "--steps", "5", "--out", str(tmp_path), *FAST]) == 0
        text = (tmp_path / "history.csv").read_text()
        hist = TrainHistory.from_csv(text)
        assert hist.to_csv(text.splitlines()[0][2:]) == text

    def test_zero_steps(self, tmp_path):
        assert main(["solve", "remark1d", "--steps", "0", "--out", str(tmp_path)]) == 0
        head, rows = read_csv(tmp_path / "history.csv")
        assert rows == []

    def test_seed_changes_run(self, tmp_path):
        for seed in (0, 1):
            main(["solve", "remark1d", "--steps", "3", "--seed", str(seed), "--out", str(tmp_path / str(seed)), *FAST])
        assert (tmp_path / "0" / "v.json").read_text() != (tmp_path / "1" / "v.json").read_text()

    def test_divergence_exit_code(self, tmp_path):
        code = main(["solve", "remark1d", "--steps", "50", "--lr0", "1e300", "--out", str(tmp_path), *FAST])
        assert code == 3
        _, rows = read_csv(tmp_path / "history.csv")
        assert 0 < len(rows) < 50

    def test_config_error_exit_code(self, tmp_path):
        assert main(["solve", "remark1d", "--dim", "3", "--out", str(tmp_path)]) == 2
        bad = tmp_path / "bad.toml"
        bad.write_text("[train\n")
        assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_io_error_exit_code(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "missing.toml")]) == 4
        args = ["solve", "remark1d", "--aux", "from-checkpoint", "--aux-dir", str(tmp_path / "none"), "--out", str(tmp_path)]
        assert main(args) == 4


class TestAuxTrain:
    def test_analytic_markers(self, tmp_path, capsys):
        assert main(["aux-train", "example1", "--out", str(tmp_path)]) == 0
        files = sorted(p.name for p in (tmp_path / "aux").iterdir())
        assert files == ["G_D.meta.json", "G_N.meta.json", "d_D.meta.json", "d_N.meta.json", "diagnostics.json",
                         "n.meta.json"]
        assert json.loads((tmp_path / "aux" / "d_D.meta.json").read_text())["variant"] == "analytic"

    def test_trained_then_reused(self, tmp_path, capsys):
        out = tmp_path / "stage1"
        assert main(["aux-train", "example1", "--aux", "trained", "--out", str(out)]) == 0
        report = capsys.readouterr().out
        assert "d_D: boundary rms=" in report
        diag = json.loads((out / "aux" / "diagnostics.json").read_text())
        assert diag["boundary"]["d_D"]["rms"] <= 1e-2
        # a rerun overwrites every file in place
        assert main(["aux-train", "example1", "--aux", "trained", "--aux-steps", "300", "--out", str(out)]) == 0
        head, rows = read_csv(out / "aux" / "aux_losses.csv")
        assert len(rows) == 300 and rows[0]["lifting_D"] == ""
        assert json.loads((out / "aux" / "d_D.meta.json").read_text())["config_hash"] in head
        run = tmp_path / "solve"
        args = ["solve", "example1", "--aux", "from-checkpoint", "--aux-dir", str(out / "aux"), "--steps", "5",
                "--out", str(run), *FAST]
        assert main(args) == 0
        assert main(["eval", str(run), "--points", "4"]) == 0
        _, rows = read_csv(run / "eval.csv")
        assert len(rows) == 16


class TestEval:
    @pytest.fixture
    def run(self, tmp_path):
        main(["solve", "example1", "--dim", "5", "--steps", "2", "--out", str(tmp_path), *FAST])
        return tmp_path

    def test_slice(self, run):
        fix = ["--fix", "x3=0.5", "--fix", "x4=0.5", "--fix", "x5=0.5"]
        assert main(["eval", str(run), "--points", "5", *fix]) == 0
        head, rows = read_csv(run / "eval.csv")
        assert len(rows) == 25
        assert list(rows[0]) == ["x1", "x2", "x3", "x4", "x5", "u", "phi1", "phi2", "phi3", "phi4", "phi5",
                                 "u_exact", "abs_error"]
        assert {r["x4"] for r in rows} == {"0.5"}
        for r in rows:
            assert float(r["abs_error"]) == abs(float(r["u"]) - float(r["u_exact"]))

    def test_exact_trial(self, run):
        assert main(["eval", str(run), "--points", "3", "--exact-trial", "--fix", "x3=0.5", "--fix", "x4=0",
                     "--fix", "x5=-0.5"]) == 0
        _, rows = read_csv(run / "eval.csv")
        assert max(float(r["abs_error"]) for r in rows) <= 1e-12

    def test_out_of_domain(self, run, capsys):
        assert main(["eval", str(run), "--fix", "x3=1.5", "--range", "x1=-2:0"]) == 2
        err = capsys.readouterr().err
        assert "x3=1.5 outside [-1, 1]" in err and "x1=-2:0 outside [-1, 1]" in err

    def test_remark1d_two_points(self, tmp_path):
        main(["solve", "remark1d", "--steps", "2", "--out", str(tmp_path), *FAST])
        assert main(["eval", str(tmp_path), "--points", "2"]) == 0
        text = (tmp_path / "eval.csv").read_text().splitlines()
        assert text[1] == "x1,u,phi1,u_exact,abs_error" and len(text) == 4


def test_eval_grid_shape():
    x = eval_grid(Box([[0, 1], [0, 2], [0, 3]]), 4, {2: 1.5}, {0: (0.25, 0.75)})
    assert x.shape == (16, 3)
    np.testing.assert_array_equal(np.unique(x[:, 0]), np.linspace(0.25, 0.75, 4))
    assert np.all(x[:, 2] == 1.5)
