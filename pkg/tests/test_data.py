import numpy as np
import pytest

from pgs2s.data import (ScalerParams, SplitSpec, TimeSeries, fit_scaler, load_csv, mackey_glass,
                        make_windows, prepare, window_and_split, write_csv)
from pgs2s.errors import (ContractError, DegenerateChannelError, DivergenceError, GapError,
                          ParseError, SchemaError, TaskSizeError)


class TestMackeyGlass:
    def test_initial_condition(self):
        assert mackey_glass(5).values[0] == 1.2

    def test_first_delay_period_is_pure_decay(self):
        # x(t-17) = 1.2 for t < 17, so x(t) = 1.2 + (c/0.1)(1 - e^{-0.1 t}) - ... solved in closed form
        a, b, x0 = 0.2, 0.1, 1.2
        forcing = a * x0 / (1 + x0 ** 10)
        t = np.arange(17.0)
        exact = forcing / b + (x0 - forcing / b) * np.exp(-b * t)
        np.testing.assert_allclose(mackey_glass(17).values, exact, atol=1e-9)

    def test_deterministic_bytes(self):
        assert mackey_glass(300).values.tobytes() == mackey_glass(300).values.tobytes()

    def test_positive_and_finite(self):
        v = mackey_glass(1500).values
        assert np.all(np.isfinite(v)) and np.all(v > 0)

    def test_long_run_bounded_and_varying(self):
        v = mackey_glass(7000).values
        assert 0.1 < v.min() < v.max() < 2.0
        assert np.std(v[1000:]) > 0.1

    def test_dt_halving_short(self):
        a = mackey_glass(400, dt=0.1).values
        b = mackey_glass(400, dt=0.05).values
        assert np.max(np.abs(a - b)) < 1e-4

    def test_positive_decay_sign_diverges(self):
        with pytest.raises(DivergenceError):
            mackey_glass(20000, decay_sign=1)

    def test_dt_must_divide_sample_every(self):
        with pytest.raises(ContractError):
            mackey_glass(10, dt=0.3)

    def test_zero_length(self):
        assert len(mackey_glass(0)) == 0


class TestCsv:
    def test_roundtrip_exact(self, tmp_path):
        s = mackey_glass(50)
        p = tmp_path / "mg.csv"
        write_csv(p, s)
        assert p.read_text().splitlines()[0] == "t,y"
        back = load_csv(p, "y")
        assert back.values.tobytes() == s.values.tobytes()

    def test_missing_column(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,y\n0,1\n")
        with pytest.raises(SchemaError, match="pm25"):
            load_csv(p, "pm25")

    def test_gap_names_row(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,y\n0,1\n1,\n2,3\n")
        with pytest.raises(GapError, match="row 2"):
            load_csv(p, "y")

    def test_parse_error(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,y\n0,abc\n")
        with pytest.raises(ParseError, match="row 1"):
            load_csv(p, "y")

    def test_exogenous_columns(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("t,y,temp\n0,1,10\n1,2,11\n")
        s = load_csv(p, "y", ["temp"])
        assert s.matrix().shape == (2, 2)
        np.testing.assert_array_equal(s.matrix()[:, 0], [1, 2])


class TestScaler:
    def test_train_maps_to_unit_interval(self):
        x = np.array([[2.0, -1.0], [4.0, 3.0], [3.0, 1.0]])
        s = fit_scaler(x)
        z = s.apply(x)
        np.testing.assert_allclose(z.min(axis=0), 0.0)
        np.testing.assert_allclose(z.max(axis=0), 1.0)

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(100, 3)) * 10
        s = fit_scaler(x)
        np.testing.assert_allclose(s.invert(s.apply(x)), x, atol=1e-12)
        np.testing.assert_allclose(s.invert_target(s.apply_target(x[:, 0])), x[:, 0], atol=1e-12)

    def test_constant_channel_rejected(self):
        with pytest.raises(DegenerateChannelError):
            fit_scaler(np.ones((5, 1)))

    def test_dict_roundtrip(self):
        s = fit_scaler(np.array([[0.1], [0.7]]))
        t = ScalerParams.from_dict(s.to_dict())
        assert t.min.tobytes() == s.min.tobytes() and t.max.tobytes() == s.max.tobytes()


class TestWindows:
    def test_count(self):
        assert len(make_windows(np.arange(100.0), 10, 5)) == 86

    def test_contents_and_anchor(self):
        w = make_windows(np.arange(20.0), 4, 3, offset=100)
        np.testing.assert_array_equal(w.inputs[0, :, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(w.targets[0], [4, 5, 6])
        assert w.anchor[0] == 103
        np.testing.assert_array_equal(w.last_observed[:2], [3, 4])

    def test_too_short(self):
        with pytest.raises(TaskSizeError):
            make_windows(np.arange(5.0), 4, 3)

    def test_split_no_straddle(self):
        T = 1000
        tr, va, te = window_and_split(np.arange(float(T)), 20, 5, SplitSpec())
        a, b = SplitSpec().boundaries(T)
        assert tr.anchor.max() + 5 < a
        assert va.anchor.min() - 19 >= a and va.anchor.max() + 5 < b
        assert te.anchor.min() - 19 >= b
        assert len(tr) == a - 24 and len(te) == T - b - 24

    def test_prepare_fits_on_train_only(self):
        s = TimeSeries("ramp", np.arange(1.0, 201.0))
        prep = prepare(s, 5, 2)
        a, _ = SplitSpec().boundaries(200)
        assert prep.scaler.min[0] == 1.0 and prep.scaler.max[0] == float(a)
        assert prep.test.inputs.max() > 1.0
