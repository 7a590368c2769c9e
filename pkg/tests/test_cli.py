import csv
import json

import numpy as np
import pytest

from pgs2s import experiment as X
from pgs2s.cli import main
from pgs2s.errors import ConfigError, NothingToPlotError

TINY = ["--set", "data.n=500", "--set", "task.L=10", "--set", "task.H=3", "--set", "model.hidden=6",
        "--set", "pg.hidden=4", "--set", "train.epochs=2", "--set", "pg.max_rounds=2",
        "--set", "pg.policy_epochs=1", "--set", "pg.rnn_epochs=1", "--set", "pool.budget=1",
        "--set", "pool.mlp_epochs=5", "--set", "pool.msvr_max_samples=100"]


class TestGenerateMg:
    def test_rows_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["generate-mg", "--n", "7000", "--out", str(a)]) == 0
        assert main(["generate-mg", "--n", "7000", "--out", str(b)]) == 0
        lines = a.read_text().splitlines()
        assert lines[0] == "t,y" and len(lines) == 7001
        assert a.read_bytes() == b.read_bytes()

    def test_zero_rows(self, tmp_path):
        p = tmp_path / "z.csv"
        assert main(["generate-mg", "--n", "0", "--out", str(p)]) == 0
        assert p.read_text() == "t,y\n"

    def test_divergent_sign_exit_code(self, tmp_path):
        assert main(["generate-mg", "--n", "20000", "--sign", "1", "--out", str(tmp_path / "d.csv")]) == 2


class TestErrors:
    def test_unknown_key(self):
        assert main(["train", "--set", "task.Q=3"]) == 1

    def test_bad_value(self):
        assert main(["train", "--set", "task.H=abc"]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["compare", "--config", str(tmp_path / "nope.json")]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 1

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            X.ExperimentSpec.from_flat({"run.seeds": "1,1"})
        with pytest.raises(ConfigError):
            X.ExperimentSpec.from_flat({"run.regimes": ""})


class TestTrainEvaluate:
    def test_evaluate_reproduces_train_metrics(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", *TINY, "--regime", "PG", "--out", str(out)]) == 0
        recorded = json.loads((out / "metrics.json").read_text())
        capsys.readouterr()
        assert main(["evaluate", str(out / "model.ckpt")]) == 0
        again = json.loads(capsys.readouterr().out)
        for k in ("rmse", "mape", "smape", "per_step_rmse"):
            assert again[k] == recorded[k]
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["task.H"] == 3 and "reward.alpha" in cfg

    def test_run_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(X.RUN_ROOT_ENV, str(tmp_path))
        assert main(["train", *TINY, "--regime", "FR", "--set", "run.name=envtest"]) == 0
        assert (tmp_path / "envtest" / "FR-seed0" / "model.ckpt").exists()

    def test_plot_selection(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", *TINY, "--regime", "PG", "--out", str(out)]) == 0
        assert main(["plot-selection", str(out / "rounds.json"), "--out", str(tmp_path / "sel")]) == 0
        with open(tmp_path / "sel.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        for r in rows:
            pct = [float(v) for k, v in r.items() if k.startswith("pct_")]
            assert len(pct) == 3 and abs(sum(pct) - 100) <= 0.1
        assert (tmp_path / "sel.png").stat().st_size > 0

    def test_plot_selection_empty(self, tmp_path):
        p = tmp_path / "rounds.json"
        p.write_text("[]")
        assert main(["plot-selection", str(p)]) == 1
        with pytest.raises(NothingToPlotError):
            X.selection_series([])

    def test_all_decoder_round(self):
        rounds = [{"round": 0, "pool_rmse_train": {"A": 1.0, "B": 2.0, "Decoder": 0.5},
                   "selection_train": [[0.0, 0.0, 100.0]]}]
        names, rows = X.selection_series(rounds)
        assert [r["pct_Decoder"] for r in rows] == [100.0]


class TestCompare:
    def test_single_cell_table(self, tmp_path, capsys):
        out = tmp_path / "cmp"
        assert main(["compare", *TINY, "--set", "run.regimes=FR", "--set", "run.seeds=0", "--out", str(out)]) == 0
        table = (out / "table.md").read_text()
        assert sum(1 for line in table.splitlines() if line.startswith("| FR")) == 1
        with open(out / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["metric"] for r in rows} == {"rmse", "mape", "smape"}
        assert all(r["status"] == "ok" for r in rows)

    def test_summary_sd_zero_for_identical(self):
        spec = X.ExperimentSpec.from_flat({"run.regimes": "FR", "run.seeds": "0,1"})
        rep = X.MetricReport(0.1, 0.2, 0.3, np.zeros(2), 5)
        res = X.CompareResult(spec, [X.CellResult("FR", 0, True, rep), X.CellResult("FR", 1, True, rep)], {}, 0.0)
        assert res.summary()["FR"]["rmse"] == (0.1, 0.0, 2)
        assert "**1.00E-01 (±0.00E+00)**" in res.table()

    def test_failed_cell_is_recorded(self):
        spec = X.ExperimentSpec.from_flat({"run.regimes": "FR,TF", "run.seeds": "0"})
        rep = X.MetricReport(0.1, 0.2, 0.3, np.zeros(2), 5)
        res = X.CompareResult(spec, [X.CellResult("FR", 0, True, rep),
                                     X.CellResult("TF", 0, False, error="DivergenceError: x", numeric=True)], {}, 0.0)
        rows = res.rows()
        assert [r["status"] for r in rows if r["regime"] == "TF"] == ["failed"] * 3
        assert "failed" in res.table()
        assert X.any_numeric_failure(res)

    def test_search(self, tmp_path):
        out = tmp_path / "s"
        assert main(["search", *TINY, "--set", "search.regime=FR", "--set", "search.budget=2", "--out", str(out)]) == 0
        trials = json.loads((out / "trials.json").read_text())
        assert len(trials) == 2
