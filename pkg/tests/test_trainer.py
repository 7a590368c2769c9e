import numpy as np
import pytest

from oracles import dominance_task
from pgs2s import trainer as T
from pgs2s.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from pgs2s.errors import (CheckpointShapeError, ConfigError, CorruptCheckpointError, SearchExhaustedError,
                          VersionMismatchError)
from pgs2s.numcore import make_rng
from pgs2s.s2s import SeqParams, predict


@pytest.fixture(scope="module")
def small_task():
    from pgs2s.auxmodels import train_msvr, NaiveModel
    from pgs2s.data import SplitSpec, mackey_glass, prepare
    prep = prepare(mackey_glass(500), 12, 4, SplitSpec())
    return T.make_task(prep, [train_msvr(prep.train, max_samples=150), NaiveModel(4)])


def cfg(**kw):
    base = dict(L=12, H=4, n_enc=6, n_dec=6, n_policy=5, epochs=3, max_rounds=2, policy_epochs=2,
                rnn_epochs=1, patience=0)
    base.update(kw)
    return T.TrainConfig(**base)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            cfg(regime="XX")
        with pytest.raises(ConfigError):
            cfg(n_dec=7)
        with pytest.raises(ConfigError):
            cfg(alpha=1.5)

    def test_dict_roundtrip(self):
        c = cfg(regime="SS", sample_actions=False)
        assert T.TrainConfig.from_dict(c.to_dict()) == c

    def test_ss_schedule_endpoints(self):
        c = cfg(epochs=5, ss_p0=0.9, ss_pmin=0.1)
        assert T.ss_probability(c, 0) == 0.9
        assert T.ss_probability(c, 4) == pytest.approx(0.1)
        assert T.ss_probability(c, 2) == pytest.approx(0.5)


class TestBaselines:
    @pytest.mark.parametrize("regime", ["FR", "TF", "SS", "TEACH_MSVR"])
    def test_train_improves_on_init(self, small_task, regime):
        c = cfg(regime=regime, epochs=4)
        init_rmse = T.evaluate_split(T.init_seq_params(c, 1), c, small_task, "val")[0].rmse
        res = T.train_baseline(c, small_task)
        assert res.best_val_rmse < init_rmse
        assert len(res.history) == 4

    def test_shared_initialisation(self):
        a = T.init_seq_params(cfg(regime="FR"), 1)
        b = T.init_seq_params(cfg(regime="PG"), 1)
        assert all(x.value.tobytes() == y.value.tobytes() for x, y in zip(a.blocks(), b.blocks()))

    def test_teacher_provenance_at_test_time(self, small_task):
        c = cfg(regime="TEACH_MSVR", epochs=1)
        res = T.train_baseline(c, small_task)
        dec = T.predict_split(res.seq, c, small_task, "test")
        assert np.all(dec.provenance[:, 1:] == 0)

    def test_unknown_teacher(self, small_task):
        with pytest.raises(ConfigError):
            T.train_baseline(cfg(regime="TEACH_MLP", epochs=1), small_task)

    def test_deterministic(self, small_task):
        a = T.train_baseline(cfg(regime="SS"), small_task)
        b = T.train_baseline(cfg(regime="SS"), small_task)
        assert all(x.value.tobytes() == y.value.tobytes() for x, y in zip(a.seq.blocks(), b.seq.blocks()))


class TestPolicyGradientTraining:
    def test_zero_rounds_returns_initial(self, small_task):
        c = cfg(max_rounds=0)
        res = T.train_pg(c, small_task)
        init = T.init_seq_params(c, 1)
        assert res.logs == []
        assert all(x.value.tobytes() == y.value.tobytes() for x, y in zip(res.seq.blocks(), init.blocks()))

    def test_one_log_per_round_and_freeze_checks(self, small_task):
        res = T.train_pg(cfg(max_rounds=3), small_task)
        assert [r.round for r in res.logs] == [0, 1, 2]
        for r in res.logs:
            assert r.seq_frozen_ok and r.policy_frozen_ok
            np.testing.assert_allclose(np.sum(r.selection_train, axis=1), 100.0, atol=0.1)
            np.testing.assert_allclose(np.sum(r.selection_val, axis=1), 100.0, atol=0.1)
            assert set(r.pool_rmse_train) == {"MSVR", "Naive", "Decoder"}

    def test_needs_pool(self, small_task):
        with pytest.raises(Exception):
            T.train_pg(cfg(), T.TaskData(small_task.prepared, None))

    def test_synthetic_dominance(self):
        task = dominance_task(1)
        c = T.TrainConfig(L=12, H=6, n_enc=8, n_dec=8, n_policy=8, max_rounds=5, rnn_epochs=1, patience=0, seed=1)
        res = T.train_pg(c, task)
        _, dec = T.evaluate_split(res.seq, c, task, "test", res.policy)
        assert np.mean(dec.actions == 0) >= 0.8


class TestRandomSearch:
    space = {"x": T.Uniform(-1, 1), "k": T.IntRange(1, 3), "c": T.Choice(["a", "b"]), "lr": T.LogUniform(1e-3, 1e-1)}

    def test_budget_one(self):
        res = T.random_search(self.space, 1, lambda p: p["x"] ** 2, seed=3)
        assert res.best == res.trials[0]["params"]

    def test_deterministic_and_best(self):
        a = T.random_search(self.space, 8, lambda p: p["x"] ** 2, seed=3)
        b = T.random_search(self.space, 8, lambda p: p["x"] ** 2, seed=3)
        assert a.trials == b.trials
        assert a.best_score == min(a.scores) <= float(np.median(a.scores))
        assert 1e-3 <= a.best["lr"] <= 1e-1 and a.best["k"] in (1, 2, 3)

    def test_failed_trials_recorded(self):
        def f(p):
            if p["x"] > 0:
                raise ConfigError("bad")
            return -p["x"]
        res = T.random_search(self.space, 10, f, seed=0)
        assert any(not t["ok"] for t in res.trials)

    def test_all_failed(self):
        def f(p):
            raise ConfigError("nope")
        with pytest.raises(SearchExhaustedError):
            T.random_search(self.space, 3, f)


class TestCheckpoint:
    def _params(self, kind="lstm"):
        return SeqParams.init(kind, 1, 4, rng=make_rng(0, "ck"))

    def test_roundtrip_bit_exact(self, tmp_path, small_task):
        seq = self._params()
        pol = T.init_policy(cfg(n_enc=4, n_dec=4), 3)
        from pgs2s.auxmodels import DirectMlpModel
        pool = [DirectMlpModel(12, 3, 4, rng=make_rng(1, "m"))]
        p = save_checkpoint(tmp_path / "a.ckpt", Checkpoint(seq, pol, small_task.scaler, {"k": 1}, pool))
        back = load_checkpoint(p)
        for x, y in zip(seq.blocks() + pol.blocks(), back.seq.blocks() + back.policy.blocks()):
            assert x.name == y.name and x.value.tobytes() == y.value.tobytes()
        X = make_rng(2, "x").uniform(size=(3, 12, 1))
        assert predict(seq, X, 4).predictions.tobytes() == predict(back.seq, X, 4).predictions.tobytes()
        assert back.scaler.min.tobytes() == small_task.scaler.min.tobytes()
        assert back.pool[0].predict(X).tobytes() == pool[0].predict(X).tobytes()
        assert back.config == {"k": 1}

    def test_truncated(self, tmp_path):
        p = save_checkpoint(tmp_path / "a.ckpt", Checkpoint(self._params()))
        data = p.read_bytes()
        p.write_bytes(data[:-20])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)

    def test_bit_flip(self, tmp_path):
        p = save_checkpoint(tmp_path / "a.ckpt", Checkpoint(self._params()))
        data = bytearray(p.read_bytes())
        data[-30] ^= 0x01
        p.write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)

    def test_version(self, tmp_path):
        p = save_checkpoint(tmp_path / "a.ckpt", Checkpoint(self._params()))
        data = bytearray(p.read_bytes())
        data[8] = 99
        p.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            load_checkpoint(p)

    def test_lstm_into_gru_config(self, tmp_path):
        p = save_checkpoint(tmp_path / "a.ckpt", Checkpoint(self._params("lstm")))
        with pytest.raises(CheckpointShapeError):
            load_checkpoint(p, expect={"cell": "gru"})

    def test_not_a_checkpoint(self, tmp_path):
        p = tmp_path / "x.ckpt"
        p.write_bytes(b"hello world, definitely not a model")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(p)
