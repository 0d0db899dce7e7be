from datetime import datetime, timezone

import numpy as np
import pytest

from thermoseed import nn
from thermoseed import pcnn
from thermoseed.timeseries import FEATURE_LAYOUT, Normalizer, TimeSeriesTable
from thermoseed.training import TrainingWindow, WindowBatch

START = datetime(2021, 1, 4, tzinfo=timezone.utc)


def make_normalizer():
    table = TimeSeriesTable(
        START,
        900,
        {
            "temperature": np.array([15.0, 25.0]),
            "temperature_out": np.array([-5.0, 25.0]),
            "temperature_neigh": np.array([15.0, 25.0]),
            "power": np.array([-1200.0, 1500.0]),
            "irradiation": np.array([0.0, 800.0]),
        },
    )
    return Normalizer(
        shared=("temperature", "temperature_out", "temperature_neigh"),
        zero_channels=("power",),
    ).fit(table)


def make_window(h=48, seed=0, warm=12, u_level=0.25):
    rng = np.random.default_rng(seed)
    n = 13 + h
    x = np.column_stack(
        [
            rng.uniform(0.1, 0.9, n),
            np.sin(2 * np.pi * np.arange(n) / 96),
            np.cos(2 * np.pi * np.arange(n) / 96),
            np.sin(2 * np.pi * np.arange(n) / 96),
            np.cos(2 * np.pi * np.arange(n) / 96),
            np.full(n, 0.5),
        ]
    )
    u = np.where(rng.random(n) < 0.5, u_level, 0.0)
    return TrainingWindow(
        x=x,
        u=u,
        t_out=rng.uniform(0.2, 0.4, n),
        t_neigh=rng.uniform(0.45, 0.55, n),
        temp=rng.uniform(0.45, 0.6, n),
        season="heating",
        start_time=START,
        anchor_index=warm,
        warm_steps=warm,
    )


def make_model(seed=0, zero_f=False, a0=0.025, b0=0.0025, c0=0.0025, d0=0.025, variant="identity"):
    config = nn.NetConfig(feature_dim=6, encoder=(8,), lstm_hidden=8, lstm_layers=1, decoder=(8,))
    net = nn.init_net(config, seed)
    if zero_f:
        net.params["decoder.out.w"][...] = 0.0
        net.params["decoder.out.b"][...] = 0.0
    physics = pcnn.PhysicsParams(a0=a0, b0=b0, c0=c0, d0=d0)
    control = pcnn.ControlTransform(variant, mass_flow=2.0, water_temp=30.0) if variant == "radiator" else pcnn.ControlTransform(variant, seed=seed)
    return pcnn.PcnnModel(net, physics, control, make_normalizer())


class TestPhysicsInit:
    def test_rule_of_thumb_values(self):
        # temperature span 10 degC with the 0.1..0.9 range: 1 degC = 0.08
        params = pcnn.init_physics_params(mean_abs_power=0.4, deg_c_scale=0.08)
        assert params.a0 == pytest.approx(0.08 / (8 * 0.4))
        assert params.a0 == pytest.approx(0.025)
        assert params.d0 == params.a0
        assert params.b0 == pytest.approx((1.5 * 0.08) / (24 * 25 * 0.08))
        assert params.b0 == pytest.approx(0.0025)

    def test_multipliers_start_at_one(self):
        params = pcnn.init_physics_params(0.4, 0.08)
        np.testing.assert_array_equal(params.a_tilde, [1.0])
        assert params.effective() == (params.a0, params.b0, params.c0, params.d0)

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError):
            pcnn.init_physics_params(0.0, 0.08)

    def test_condition_flags(self):
        params = pcnn.init_physics_params(0.4, 0.08)
        assert params.condition_violations() == ()
        params.b_tilde[0] = -1.0
        assert "b_positive" in params.condition_violations()
        params.b_tilde[0] = 300.0  # b = 0.75, c = 0.0025 -> decay fine; push harder
        params.c_tilde[0] = 300.0
        assert "decay_positive" in params.condition_violations()


class TestControlTransform:
    def test_identity(self):
        g = pcnn.ControlTransform("identity")
        ctx = g.bind(None)
        out = g.apply(ctx, pcnn.ag.Tensor(np.array([[0.3]])), None)
        assert out.data[0, 0] == 0.3

    def test_every_variant_has_root_at_zero(self):
        zero = pcnn.ag.Tensor(np.array([[0.0]]))
        temp = pcnn.ag.Tensor(np.array([[0.5]]))
        for variant in ("identity", "learned"):
            g = pcnn.ControlTransform(variant, seed=3)
            assert g.apply(g.bind(None), zero, temp).data[0, 0] == 0.0
        rad = pcnn.ControlTransform("radiator", mass_flow=2.0, water_temp=30.0)
        assert rad.apply(rad.bind(None), zero, temp).data[0, 0] == 0.0

    def test_radiator_worked_example(self):
        g = pcnn.ControlTransform("radiator", mass_flow=2.0, water_temp=30.0)
        out = g.apply(g.bind(None), pcnn.ag.Tensor(np.array([[0.5]])), pcnn.ag.Tensor(np.array([[20.0]])))
        assert out.data[0, 0] == pytest.approx(10.0)

    def test_learned_is_strictly_increasing_with_positive_derivative(self):
        g = pcnn.ControlTransform("learned", seed=7)
        ctx = g.bind(None)
        u = np.linspace(-1.0, 1.0, 201).reshape(-1, 1)
        vals = g.apply(ctx, pcnn.ag.Tensor(u), None).data.reshape(-1)
        assert np.all(np.diff(vals) > 0)
        assert np.all(g.derivative(u.reshape(-1)) > 0)
        # sign follows the control: negative input, negative power
        assert vals[0] < 0 < vals[-1]

    def test_radiator_has_no_analytic_derivative(self):
        g = pcnn.ControlTransform("radiator", mass_flow=2.0, water_temp=30.0)
        with pytest.raises(ValueError, match="sign-mode"):
            g.derivative([0.5])


class TestStep:
    def test_equilibrium(self):
        model = make_model(zero_f=True)
        state = model.initial_state(0.5)
        t_eq = 0.5
        new_state, t_next = model.step(state, np.zeros(6), 0.0, t_eq, t_eq, temperature=t_eq)
        assert t_next == pytest.approx(t_eq, abs=1e-15)
        assert new_state.energy.data[0, 0] == 0.0

    def test_pure_heating_gain(self):
        model = make_model(zero_f=True, b0=0.0, c0=0.0)
        state = model.initial_state(0.5)
        _, t_next = model.step(state, np.zeros(6), 0.2, 0.3, 0.5)
        assert t_next == pytest.approx(0.5 + 0.025 * 0.2, rel=1e-15)

    def test_hand_evaluated_step(self):
        model = make_model(zero_f=True)
        model.net.params["decoder.out.b"][...] = 0.001  # f outputs exactly 0.001
        state = model.initial_state(0.52)
        u, t_out, t_neigh = 0.3, 0.31, 0.49
        _, t_next = model.step(state, np.zeros(6), u, t_out, t_neigh)
        expected = (
            0.52
            + 0.001
            + 0.025 * u
            - 0.0025 * (0.52 - t_out)
            - 0.0025 * (0.52 - t_neigh)
        )
        assert t_next == pytest.approx(expected, abs=1e-15)

    def test_cooling_branch_uses_d(self):
        model = make_model(zero_f=True, b0=0.0, c0=0.0, d0=0.05)
        state = model.initial_state(0.5)
        _, t_next = model.step(state, np.zeros(6), -0.2, 0.3, 0.5)
        assert t_next == pytest.approx(0.5 + 0.05 * (-0.2), rel=1e-14)

    def test_temperature_is_drift_plus_energy(self):
        model = make_model()
        state = model.initial_state(0.5)
        rng = np.random.default_rng(8)
        for _ in range(20):
            state, t_next = model.step(state, rng.uniform(0, 1, 6), rng.uniform(-0.3, 0.3), 0.3, 0.5)
            assert t_next == pytest.approx(state.drift.data[0, 0] + state.energy.data[0, 0], abs=1e-12)


class TestPredict:
    def test_horizon_one_equilibrium(self):
        model = make_model(zero_f=True)
        w = make_window(h=1)
        t_eq = 0.5
        w.temp[:] = t_eq
        w.u[:] = 0.0
        w.t_out[:] = t_eq
        w.t_neigh[:] = t_eq
        preds = model.predict_window(w)
        assert preds.shape == (1,)
        assert preds[0] == pytest.approx(t_eq, abs=1e-15)

    def test_deterministic(self):
        model = make_model()
        w = make_window(h=24)
        np.testing.assert_array_equal(model.predict_window(w), model.predict_window(w))

    def test_closed_form_matches_recursion(self):
        model = make_model(seed=4)
        for seed in (0, 1):
            w = make_window(h=288, seed=seed)
            np.testing.assert_allclose(model.closed_form_window(w), model.predict_window(w), atol=1e-9)

    def test_closed_form_one_step_is_single_update(self):
        model = make_model(seed=2)
        w = make_window(h=1, seed=3)
        np.testing.assert_allclose(model.closed_form_window(w), model.predict_window(w), atol=1e-12)

    def test_doubling_controls_shifts_by_geometric_sum(self):
        model = make_model(seed=5)
        w = make_window(h=40, seed=6)
        base = model.predict_window(w)
        doubled = w.perturbed("u", 0, 0.0)
        doubled.u[w.warm_steps :] *= 2.0
        shifted = model.predict_window(doubled)
        a, b, c, _ = model.physics.effective()
        decay = 1.0 - b - c
        for i in (1, 7, 40):
            expect = sum(
                decay ** (j - 1) * a * w.u[w.warm_steps + i - j]  # delta u = u itself
                for j in range(1, i + 1)
            )
            assert shifted[i - 1] - base[i - 1] == pytest.approx(expect, abs=1e-12)

    def test_warm_start_teacher_forcing_only_inside_energy_update(self):
        # altering a warm-start measured temperature changes the energy path
        # but must not touch the drift trajectory
        model = make_model(seed=7)
        w = make_window(h=24, seed=9)
        drifts_a, _ = model.drift_trajectory(w)
        w2 = w.perturbed("temp", 5, 0.1)
        drifts_b, _ = model.drift_trajectory(w2)
        np.testing.assert_array_equal(drifts_a[1:], drifts_b[1:])
        assert not np.array_equal(model.predict_window(w), model.predict_window(w2))

    def test_batch_matches_single(self):
        # batched and single gemms may differ in the last bit, nothing more
        model = make_model(seed=8)
        ws = [make_window(h=30, seed=s) for s in range(4)]
        batch = WindowBatch.from_windows(ws)
        stacked = model.predict_batch(batch)
        for i, w in enumerate(ws):
            np.testing.assert_allclose(stacked[i], model.predict_window(w), atol=1e-13)


class TestSensitivity:
    def test_one_step_heating_is_a(self):
        model = make_model(seed=1)
        w = make_window(h=20, seed=2)
        w.u[w.warm_steps + 5] = 0.2  # ensure heating branch at the probed row
        val = model.sensitivity(w, "u", j=1, i=6, mode="analytic")
        a, *_ = model.physics.effective()
        assert val == pytest.approx(a, rel=1e-15)
        num = model.sensitivity(w, "u", j=1, i=6, mode="numeric")
        assert num == pytest.approx(val, abs=1e-9)

    def test_decay_power_for_j3(self):
        model = make_model(seed=3)
        w = make_window(h=20, seed=4)
        w.u[w.warm_steps + 5] = 0.2
        a, b, c, _ = model.physics.effective()
        val = model.sensitivity(w, "u", j=3, i=8, mode="analytic")
        assert val == pytest.approx((1 - b - c) ** 2 * a, rel=1e-15)
        num = model.sensitivity(w, "u", j=3, i=8, mode="numeric")
        assert num == pytest.approx(val, abs=1e-9)

    def test_exogenous_temperature_sensitivities(self):
        model = make_model(seed=5)
        w = make_window(h=24, seed=6)
        a, b, c, _ = model.physics.effective()
        for j, i, channel, coef in ((2, 9, "t_out", b), (4, 11, "t_neigh", c)):
            val = model.sensitivity(w, channel, j=j, i=i, mode="analytic")
            assert val == pytest.approx((1 - b - c) ** (j - 1) * coef, rel=1e-15)
            assert val > 0
            num = model.sensitivity(w, channel, j=j, i=i, mode="numeric")
            assert num == pytest.approx(val, abs=1e-9)

    def test_zero_control_probes_heating_branch(self):
        # trained-style model with a != d: the switch at g = 0 belongs to heating
        model = make_model(seed=6, a0=0.03, d0=0.05)
        w = make_window(h=16, seed=7)
        row = w.warm_steps + 3
        w.u[row] = 0.0
        val = model.sensitivity(w, "u", j=1, i=4, mode="analytic")
        assert val == pytest.approx(0.03, rel=1e-15)
        num = model.sensitivity(w, "u", j=1, i=4, mode="numeric")
        assert num == pytest.approx(val, rel=1e-9)

    def test_out_of_range_rejected(self):
        model = make_model()
        w = make_window(h=10)
        with pytest.raises(ValueError):
            model.sensitivity(w, "u", j=5, i=4)
        with pytest.raises(ValueError):
            model.sensitivity(w, "u", j=0, i=4)


class TestGreyBox:
    def test_trivial_coefficients(self):
        model = make_model(a0=0.0, b0=0.0, c0=0.0, d0=0.0)
        view = model.grey_box_view()
        assert view.a_state == 1.0
        assert view.b_drift == -1.0

    def test_heating_coefficient_is_a(self):
        model = make_model()
        view = model.grey_box_view()
        a, b, c, d = model.physics.effective()
        assert view.b_heat == a and view.b_cool == d
        np.testing.assert_array_equal(view.b_exogenous, [b, c])

    def test_recursion_equivalence_over_random_trajectory(self):
        model = make_model(seed=9)
        view = model.grey_box_view()
        rng = np.random.default_rng(10)
        state = model.initial_state(0.5)
        z = 0.5
        for _ in range(100):
            x = rng.uniform(0, 1, 6)
            u = rng.uniform(-0.3, 0.3)
            t_out = rng.uniform(0.2, 0.4)
            t_neigh = rng.uniform(0.45, 0.55)
            drift_now = state.drift.data[0, 0]
            new_state, t_next = model.step(state, x, u, t_out, t_neigh)
            drift_next = new_state.drift.data[0, 0]
            z = view.step(z, u, t_out, t_neigh, drift_now, drift_next)
            assert z == pytest.approx(t_next, abs=1e-12)
            state = new_state


class TestPersistence:
    def test_checkpoint_roundtrip_preserves_predictions(self, tmp_path):
        model = make_model(seed=11)
        model.physics.a_tilde[0] = 1.07  # move off the defaults
        w = make_window(h=36, seed=12)
        path = tmp_path / "model.ckpt"
        model.save(path)
        back = pcnn.PcnnModel.load(path)
        np.testing.assert_array_equal(back.predict_window(w), model.predict_window(w))
        assert back.physics.effective() == model.physics.effective()
        assert back.normalizer.bounds_ == model.normalizer.bounds_

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        model = make_model(seed=13)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save(a)
        model.save(b)
        assert a.read_bytes() == b.read_bytes()


class TestGuards:
    def test_full_horizon_gradients_stay_finite(self):
        # default initialization, 288-step unroll: no NaN/Inf anywhere
        model = make_model(seed=21)
        w = make_window(h=288, seed=22)
        batch = WindowBatch.from_windows([w])
        tape = pcnn.ag.Tape()
        loss, leaves = model.batch_loss(tape, batch)
        assert np.isfinite(float(loss.data))
        names = [name for name, _ in model.trainable_items()]
        grads = pcnn.ag.backward(tape, loss, [leaves[n] for n in names])
        assert all(np.all(np.isfinite(g)) for g in grads)

    def test_forbidden_feature_layout_rejected(self):
        config = nn.NetConfig(feature_dim=6, encoder=(4,), lstm_hidden=4, lstm_layers=1, decoder=(4,))
        net = nn.init_net(config, 0)
        physics = pcnn.init_physics_params(0.4, 0.08)
        with pytest.raises(ValueError, match="energy accumulator"):
            pcnn.PcnnModel(
                net, physics, pcnn.ControlTransform(), make_normalizer(),
                feature_names=("irradiation", "power", "month_sin", "month_cos", "tod_sin", "tod_cos"),
            )

    def test_window_too_short_rejected(self):
        with pytest.raises(ValueError):
            make_window(h=0)

    def test_include_warm_loss_changes_objective(self):
        w = make_window(h=24, seed=14)
        batch = WindowBatch.from_windows([w])
        model_a = make_model(seed=15)
        loss_a, _ = model_a.batch_loss(pcnn.ag.Tape(), batch)
        model_b = make_model(seed=15)
        model_b.include_warm_loss = True
        loss_b, _ = model_b.batch_loss(pcnn.ag.Tape(), batch)
        assert float(loss_a.data) != float(loss_b.data)
