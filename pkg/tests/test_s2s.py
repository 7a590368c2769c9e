import numpy as np
import pytest

from oracles import rollout
from pgs2s import rlpolicy as rl
from pgs2s.errors import ConfigError, ContractError, DimensionError
from pgs2s.numcore import grad_check, make_rng
from pgs2s.s2s import (SRC_DECODER, SRC_REPLAY, SRC_TRUTH, Regime, SeqParams, bptt, decode_sequence,
                       encode, predict)

CELLS = ["lstm", "ernn", "gru"]


def tiny(kind, seed=0, m=2, n=3, B=2, L=4, H=3):
    rng = make_rng(seed, "tiny", kind)
    params = SeqParams.init(kind, m, n, rng=rng)
    X = rng.uniform(-1, 1, size=(B, L, m))
    Y = rng.uniform(-1, 1, size=(B, H))
    return params, X, Y


class TestOracleEquivalence:
    @pytest.mark.parametrize("kind", CELLS)
    def test_free_running(self, kind):
        params, X, _ = tiny(kind)
        res = predict(params, X, 3, Regime.FR)
        for i in range(len(X)):
            p, s = rollout(params, X[i], 3, "FR")
            np.testing.assert_allclose(res.predictions[i], p, rtol=0, atol=1e-12)
            np.testing.assert_allclose(res.states[i], s, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", CELLS)
    def test_teacher_forced(self, kind):
        params, X, Y = tiny(kind, seed=1)
        res = bptt(params, X, Y, Regime.TF).decode
        for i in range(len(X)):
            p, _ = rollout(params, X[i], 3, "TF", truth=Y[i])
            np.testing.assert_allclose(res.predictions[i], p, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", CELLS)
    def test_teacher_model_inputs(self, kind):
        params, X, _ = tiny(kind, seed=2)
        aux = make_rng(2, "aux").uniform(size=(2, 2, 3))
        enc = encode(params, X)
        res = decode_sequence(params, enc, X[:, -1, 0], 3, Regime.TEACH, aux=aux, teacher=1)
        for i in range(len(X)):
            p, _ = rollout(params, X[i], 3, "AUX", aux_inputs=aux[i, 1])
            np.testing.assert_allclose(res.predictions[i], p, rtol=0, atol=1e-12)
        assert np.all(res.provenance[:, 0] == SRC_TRUTH)
        assert np.all(res.provenance[:, 1:] == 1)


class TestGradients:
    @pytest.mark.parametrize("kind", CELLS)
    @pytest.mark.parametrize("regime", ["FR", "TF", "SS"])
    def test_bptt_matches_finite_differences(self, kind, regime):
        for seed in range(3):
            params, X, Y = tiny(kind, seed=seed)
            kw = {"p": 0.5, "rng": make_rng(seed, "coin")} if regime == "SS" else {}
            recorded = bptt(params, X, Y, regime, **kw).decode.inputs
            err = grad_check(lambda: bptt(params, X, Y, regime, inputs=recorded).loss, params.blocks())
            assert err < 1e-6, (kind, regime, seed, err)

    def test_gradients_are_overwritten_not_accumulated(self):
        params, X, Y = tiny("lstm")
        bptt(params, X, Y)
        g1 = [b.grad.copy() for b in params.blocks()]
        bptt(params, X, Y)
        for a, b in zip(g1, params.blocks()):
            np.testing.assert_array_equal(a, b.grad)


class TestRegimeIdentities:
    @pytest.mark.parametrize("kind", CELLS)
    def test_ss_endpoints(self, kind):
        params, X, Y = tiny(kind, seed=5, B=4, H=5)
        tf = bptt(params, X, Y, "TF")
        tf_g = [b.grad.copy() for b in params.blocks()]
        ss1 = bptt(params, X, Y, "SS", p=1.0, rng=make_rng(0, "c"))
        assert ss1.decode.predictions.tobytes() == tf.decode.predictions.tobytes()
        for a, b in zip(tf_g, params.blocks()):
            assert a.tobytes() == b.grad.tobytes()
        fr = bptt(params, X, Y, "FR")
        fr_g = [b.grad.copy() for b in params.blocks()]
        ss0 = bptt(params, X, Y, "SS", p=0.0, rng=make_rng(0, "c"))
        assert ss0.decode.predictions.tobytes() == fr.decode.predictions.tobytes()
        for a, b in zip(fr_g, params.blocks()):
            assert a.tobytes() == b.grad.tobytes()

    @pytest.mark.parametrize("kind", CELLS)
    def test_pg_constant_decoder_is_free_running(self, kind):
        params, X, Y = tiny(kind, seed=6, B=4, H=5)
        aux = make_rng(6, "aux").uniform(size=(4, 2, 5))
        theta = rl.PolicyParams.init(params.n_dec, 4, 3, make_rng(6, "pol"))
        sel = rl.make_selector(theta, forced=2)
        fr = bptt(params, X, Y, "FR")
        fr_g = [b.grad.copy() for b in params.blocks()]
        pg = bptt(params, X, Y, "PG", aux=aux, selector=sel)
        assert pg.decode.predictions.tobytes() == fr.decode.predictions.tobytes()
        for a, b in zip(fr_g, params.blocks()):
            assert a.tobytes() == b.grad.tobytes()
        assert np.all(pg.decode.provenance[:, 1:] == SRC_DECODER)

    def test_tf_and_fr_share_first_step(self):
        params, X, Y = tiny("lstm", seed=7)
        tf = bptt(params, X, Y, "TF").decode
        fr = bptt(params, X, Y, "FR").decode
        np.testing.assert_array_equal(tf.predictions[:, 0], fr.predictions[:, 0])
        assert np.all(tf.provenance[:, 1:] == SRC_TRUTH)
        assert np.all(fr.provenance[:, 1:] == SRC_DECODER)

    def test_tf_falls_back_to_fr_at_test_time(self):
        params, X, _ = tiny("gru", seed=8)
        a = predict(params, X, 3, "TF")
        b = predict(params, X, 3, "FR")
        assert a.predictions.tobytes() == b.predictions.tobytes()

    def test_ss_coin_rate(self):
        params, X, Y = tiny("ernn", seed=9, B=2000, H=6)
        res = bptt(params, X, Y, "SS", p=0.3, rng=make_rng(1, "coin")).decode
        frac = np.mean(res.provenance[:, 1:] == SRC_TRUTH)
        assert abs(frac - 0.3) < 4 * np.sqrt(0.3 * 0.7 / res.provenance[:, 1:].size)

    def test_replay_provenance(self):
        params, X, Y = tiny("lstm")
        res = bptt(params, X, Y, inputs=np.zeros((2, 3))).decode
        assert np.all(res.provenance[:, 1:] == SRC_REPLAY)


class TestContracts:
    def test_decoder_width_must_match_encoder(self):
        with pytest.raises((ConfigError, ContractError, DimensionError)):
            SeqParams.init("lstm", 1, 4, 5)

    def test_channel_mismatch(self):
        params, X, _ = tiny("lstm")
        with pytest.raises(DimensionError):
            encode(params, X[:, :, :1])

    def test_pg_needs_pool(self):
        params, X, _ = tiny("lstm")
        with pytest.raises(ContractError):
            predict(params, X, 3, "PG")

    def test_copy_is_independent(self):
        params, _, _ = tiny("gru")
        cp = params.copy()
        cp.blocks()[0].value[0, 0] += 1.0
        assert params.blocks()[0].value[0, 0] != cp.blocks()[0].value[0, 0]
