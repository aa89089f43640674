import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kanrate import cli, experiment
from kanrate.backfit import TrainingError, refresh_normalizers
from kanrate.model import AggregationKind, init_model, load_model
from kanrate.targets import Dataset, TargetSpec, read_dataset, write_dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def kv(line):
    return dict(item.split("=", 1) for item in line.split())


@pytest.fixture
def poly_csv(tmp_path, capsys):
    path = tmp_path / "d.csv"
    code, _, _ = run(capsys, "gen", "--target", "piecewise-poly", "--r", 2, "--d", 3, "--n", 300,
                     "--sigma", 0.05, "--seed", 1, "--out", path)
    assert code == 0
    return path


class TestGen:
    def test_shape(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        code, stdout, _ = run(capsys, "gen", "--target", "piecewise-poly", "--r", 2, "--d", 5,
                              "--n", 100, "--sigma", 0.05, "--seed", 1, "--out", out)
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 101 and all(len(line.split(",")) == 6 for line in lines)
        assert kv(stdout.strip())["rows"] == "100"

    def test_fourier_needs_d1(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--target", "fourier", "--d", 3, "--n", 10,
                           "--out", tmp_path / "f.csv")
        assert code == 2 and "error" in err

    def test_noiseless(self, tmp_path, capsys):
        out = tmp_path / "f.csv"
        assert run(capsys, "gen", "--target", "fourier", "--n", 50, "--sigma", 0, "--out", out)[0] == 0
        data = read_dataset(out)
        np.testing.assert_array_equal(data.Y, TargetSpec("fourier", 2, 1)(data.X))

    def test_idempotent(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            run(capsys, "gen", "--target", "piecewise-poly", "--n", 40, "--seed", 3, "--out", p)
        assert a.read_bytes() == b.read_bytes()


class TestFit:
    def test_recovers_single_node_data(self, tmp_path, capsys):
        truth = init_model(2, 1, ["additive"], 3, 5, seed=21, noise=0.1)
        X = np.random.default_rng(0).random((2000, 2))
        truth = refresh_normalizers(truth, X)
        path = tmp_path / "one.csv"
        write_dataset(path, Dataset(X, truth(X)))
        code, out, _ = run(capsys, "fit", "--arch", "additive", "--q", 1, "--r", 2, "--data", path,
                           "--model-out", tmp_path / "m.json")
        assert code == 0
        assert float(kv(out.strip())["train_mse"]) < 1e-6

    def test_hybrid_node_split(self, tmp_path, capsys, poly_csv):
        model_path = tmp_path / "m.json"
        code, out, _ = run(capsys, "fit", "--arch", "hybrid", "--q", 4, "--data", poly_csv,
                           "--model-out", model_path, "--max-sweeps", 2)
        assert code == 0 and set(kv(out.strip())) == {"train_mse", "sweeps"}
        kinds = [n.kind for n in load_model(model_path).nodes]
        assert kinds.count(AggregationKind.MULTIPLICATIVE) == 2
        assert kinds.count(AggregationKind.ADDITIVE) == 2

    def test_missing_data_flag(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["fit", "--arch", "additive", "--model-out", str(tmp_path / "m.json")])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unreadable_data(self, tmp_path, capsys):
        code, _, err = run(capsys, "fit", "--arch", "additive", "--data", tmp_path / "none.csv",
                           "--model-out", tmp_path / "m.json")
        assert code == 2 and "cannot read dataset" in err

    def test_training_failure(self, tmp_path, capsys, monkeypatch):
        def broken(*a, **k):
            raise TrainingError("non-finite outer coefficients in node 0 during sweep 1")

        monkeypatch.setattr(cli.backfit, "fit", broken)
        path = tmp_path / "d.csv"
        write_dataset(path, Dataset(np.array([[0.1], [0.5]]), [0.0, 1.0]))
        code, _, err = run(capsys, "fit", "--arch", "additive", "--data", path,
                           "--model-out", tmp_path / "m.json")
        assert code == 3 and "training failed" in err


class TestEval:
    def test_matches_fit_report(self, tmp_path, capsys, poly_csv):
        model_path = tmp_path / "m.json"
        _, out, _ = run(capsys, "fit", "--arch", "additive", "--q", 2, "--data", poly_csv,
                        "--model-out", model_path, "--max-sweeps", 5)
        train = float(kv(out.strip())["train_mse"])
        code, out, _ = run(capsys, "eval", "--model", model_path, "--data", poly_csv)
        assert code == 0
        assert abs(float(kv(out.strip())["mse"]) - train) <= 1e-12

    def test_target_mode_delegates(self, tmp_path, capsys, poly_csv):
        model_path = tmp_path / "m.json"
        run(capsys, "fit", "--arch", "additive", "--q", 1, "--data", poly_csv,
            "--model-out", model_path, "--max-sweeps", 3)
        code, out, _ = run(capsys, "eval", "--model", model_path, "--target", "piecewise-poly",
                           "--d", 3, "--test-points", 3000, "--seed", 8)
        assert code == 0
        ref = experiment.estimate_test_mse(load_model(model_path), TargetSpec(d=3), 3000, 8)
        assert float(kv(out.strip())["mse"]) == ref

    def test_corrupted_model_names_field(self, tmp_path, capsys, poly_csv):
        model_path = tmp_path / "m.json"
        run(capsys, "fit", "--arch", "additive", "--q", 1, "--data", poly_csv,
            "--model-out", model_path, "--max-sweeps", 1)
        obj = json.loads(model_path.read_text())
        del obj["nodes"][0]["normalizer"]
        model_path.write_text(json.dumps(obj))
        code, _, err = run(capsys, "eval", "--model", model_path, "--data", poly_csv)
        assert code == 2 and "nodes[0].normalizer" in err

    def test_needs_one_source(self, tmp_path, capsys):
        path = tmp_path / "m.json"
        from kanrate.model import save_model
        save_model(init_model(1, 1, ["additive"]), path)
        assert run(capsys, "eval", "--model", path)[0] == 2


class TestExperiment:
    def test_smoke_config(self, tmp_path, capsys):
        code, out, _ = run(capsys, "experiment", "--config", CONFIGS / "smoke.ini", "--out-dir", tmp_path)
        assert code == 0
        lines = out.strip().splitlines()
        assert [line.split("=")[0] for line in lines] == ["slope[additive]", "slope[hybrid]"]
        assert (tmp_path / "rows.csv").exists() and (tmp_path / "summary.csv").exists()

    def test_missing_config(self, tmp_path, capsys):
        code, _, _ = run(capsys, "experiment", "--config", tmp_path / "no.ini", "--out-dir", tmp_path)
        assert code == 2

    def test_partial_failure_exit_code(self, tmp_path, capsys, monkeypatch):
        real_fit = experiment.fit

        def flaky(model, data, cfg):
            if data.n == 200:
                raise TrainingError("boom")
            return real_fit(model, data, cfg)

        monkeypatch.setattr(experiment, "fit", flaky)
        code, _, err = run(capsys, "experiment", "--config", CONFIGS / "smoke.ini", "--out-dir", tmp_path)
        assert code == 4 and "boom" in err
        assert (tmp_path / "rows.csv").exists()


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "kanrate", "gen", "--target", "piecewise-poly",
                           "--n", "5", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("rows=5 ")
