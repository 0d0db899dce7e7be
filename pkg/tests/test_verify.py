import json

import numpy as np
import pytest

from thermoseed import pcnn, rc, synthbuild as sb, verify
from thermoseed.nn import LstmRegressor
from thermoseed.pcnn import PcnnRegressor

TINY = dict(encoder=(8,), lstm_hidden=8, lstm_layers=1, decoder=(8,), epochs=1, batch_size=8)


@pytest.fixture(scope="module")
def bundle():
    scenario = sb.BuildingScenario(days=10, noise_std=0.02)
    return verify.prepare_bundle(scenario, seed=0)


@pytest.fixture(scope="module")
def fresh_model(bundle):
    return PcnnRegressor(**TINY).build_model(bundle.train_windows, bundle.normalizer)


@pytest.fixture(scope="module")
def rc_model(bundle):
    scenario = bundle.scenario
    return rc.RcModel(latitude_deg=scenario.latitude_deg, window_azimuth_deg=scenario.window_azimuth_deg).fit(
        bundle.clean, normalizer=bundle.normalizer
    )


class TestCheckConsistency:
    def test_fresh_model_passes_exact_mode(self, bundle, fresh_model):
        report = verify.check_consistency(fresh_model, bundle.val_windows[:2], pairs_per_window=20, seed=1)
        assert report.global_pass
        assert len(report.records) == 40
        assert all(r.numeric > 0 for r in report.records)
        assert max(r.rel_err for r in report.records) < 1e-6

    def test_negated_loss_coefficient_fails_conditions(self, bundle):
        model = PcnnRegressor(**TINY).build_model(bundle.train_windows, bundle.normalizer)
        model.physics.b_tilde[0] = -1.0
        report = verify.check_consistency(model, bundle.val_windows[:1], pairs_per_window=5, seed=2)
        assert "b_positive" in report.condition_violations
        assert not report.global_pass

    def test_one_step_heating_sensitivity_is_a(self, bundle, fresh_model):
        w = bundle.val_windows[0]
        w = w.perturbed("u", w.warm_steps, 0.0)
        w.u[w.warm_steps] = 0.2
        a, *_ = fresh_model.physics.effective()
        assert fresh_model.sensitivity(w, "u", 1, 1, mode="analytic") == pytest.approx(a, rel=1e-15)

    def test_exact_mode_rejects_non_identity_transform(self, bundle):
        model = PcnnRegressor(g_variant="learned", **TINY).build_model(bundle.train_windows, bundle.normalizer)
        with pytest.raises(ValueError, match="identity"):
            verify.check_consistency(model, bundle.val_windows[:1])

    def test_sign_mode_for_learned_transform(self, bundle):
        model = PcnnRegressor(g_variant="learned", **TINY).build_model(bundle.train_windows, bundle.normalizer)
        report = verify.check_consistency(model, bundle.val_windows[:1], pairs_per_window=10, mode="sign", seed=3)
        assert report.global_pass

    def test_report_csv_written(self, bundle, fresh_model, tmp_path):
        report = verify.check_consistency(fresh_model, bundle.val_windows[:1], pairs_per_window=5, seed=4)
        path = tmp_path / "consistency.csv"
        report.save(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("window_id,channel")
        assert len(lines) == 6


class TestSplitControls:
    def test_energy_halves_balance(self):
        rng = np.random.default_rng(5)
        u = np.where(rng.random(200) < 0.5, 0.3, 0.0)
        split, first, second = verify.split_controls(u)
        e1, e2 = np.abs(first).sum(), np.abs(second).sum()
        assert abs(e1 - e2) / (e1 + e2) < 0.1
        np.testing.assert_array_equal(first + second, u)
        assert np.all(first[split:] == 0) and np.all(second[:split] == 0)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            verify.split_controls(np.zeros(10))


class TestControlAblation:
    def heating_window(self, bundle):
        for w in bundle.val_windows + bundle.train_windows:
            if w.season == "heating" and np.abs(w.u[w.warm_steps : w.warm_steps + w.horizon]).sum() > 0.5:
                return w
        raise RuntimeError("no powered heating window in the bundle")

    def test_ordering_and_difference_curves(self, bundle, fresh_model, rc_model):
        w = self.heating_window(bundle)
        run = verify.run_control_ablation({"pcnn": fresh_model, "rc": rc_model}, w)
        assert run.energy_balance < 0.1
        for name in ("pcnn", "rc"):
            np.testing.assert_array_equal(
                run.differences[name]["full"],
                run.predictions[name]["full"] - run.predictions[name]["none"],
            )
        # before any power is applied the full and none variants agree
        u_h = run.window_controls["full"]
        first_power = np.flatnonzero(u_h != 0)[0]
        np.testing.assert_allclose(run.differences["pcnn"]["full"][:first_power], 0.0, atol=1e-12)

    def test_rc_difference_matches_closed_form(self, bundle, rc_model):
        w = self.heating_window(bundle)
        run = verify.run_control_ablation({"rc": rc_model}, w, enforce=("rc",))
        delta_watts = bundle.normalizer.denormalize_values("power", run.window_controls["full"])
        expected = verify.rc_difference_closed_form(rc_model.params_, delta_watts, w.horizon)
        np.testing.assert_allclose(run.differences["rc"]["full"], expected, atol=1e-10)

    def test_inconsistent_model_raises_when_enforced(self, bundle, fresh_model):
        w = self.heating_window(bundle)

        class Backwards:
            normalizer = bundle.normalizer

            def predict_batch(self, batch):
                # colder when heated: a deliberate consistency breach
                u_effect = np.cumsum(batch.u[batch.warm_steps : -1], axis=0).T
                base = batch.temp[batch.warm_steps + 1 :].T
                return base - 0.1 * u_effect

            def predict_window(self, window, denormalize=False):
                from thermoseed.training import WindowBatch

                return self.predict_batch(WindowBatch.from_windows([window]))[0]

        with pytest.raises(verify.AblationOrderingError):
            verify.run_control_ablation({"pcnn": Backwards()}, w)
        # the same defect under a non-enforced name is recorded, not raised
        verify.run_control_ablation({"lstm": Backwards()}, w)

    def test_cooling_window_rejected(self, bundle, fresh_model):
        w = bundle.val_windows[0].perturbed("u", 0, 0.0)
        object.__setattr__(w, "season", "cooling") if hasattr(type(w), "__slots__") else setattr(w, "season", "cooling")
        with pytest.raises(ValueError, match="heating"):
            verify.run_control_ablation({"pcnn": fresh_model}, w)


class TestErrorPropagation:
    def test_identical_models_sit_on_the_diagonal(self, bundle, fresh_model, tmp_path):
        windows = bundle.val_windows[:6]
        reports = verify.error_propagation(
            {"a": fresh_model, "b": fresh_model}, windows, bundle.normalizer, prefix=str(tmp_path / "cmp")
        )
        np.testing.assert_allclose(reports["a"].window_mae, reports["b"].window_mae, rtol=1e-12)
        pairs = (tmp_path / "cmp_window_mae_pairs.csv").read_text().splitlines()
        assert pairs[0] == "window_id,a,b"
        assert len(pairs) == len(windows) + 1
        markers = (tmp_path / "cmp_markers.csv").read_text().splitlines()
        assert markers[0] == "hours_ahead,step,a,b"

    def test_rc_participates_through_predict_window(self, bundle, rc_model):
        reports = verify.error_propagation({"rc": rc_model}, bundle.val_windows[:3], bundle.normalizer)
        assert np.isfinite(reports["rc"].window_mae).all()


class TestExperimentRunners:
    def test_ablation_table_rows_and_models(self, bundle, tmp_path):
        tables = verify.run_ablation_lstm(bundle, seeds=(0, 1), pcnn_kwargs=TINY, lstm_kwargs=TINY)
        assert len(tables.rows) == 4
        assert set(tables.pcnn_models) == {0, 1} and set(tables.lstm_models) == {0, 1}
        path = tmp_path / "losses.csv"
        tables.save(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 4 + 2  # header, rows, two mean lines
        assert np.isfinite(tables.median_loss("pcnn", "val_loss"))

    def test_lstm_sensitivities_recorded_without_judgement(self, bundle):
        tables = verify.run_ablation_lstm(bundle, seeds=(0,), pcnn_kwargs=TINY, lstm_kwargs=TINY)
        report = verify.check_consistency(tables.lstm_models[0], bundle.val_windows[:1], pairs_per_window=10, seed=5)
        assert report.global_pass  # nothing enforced
        assert np.isnan(report.records[0].analytic)
        assert isinstance(report.negative_records("u"), list)

    def test_multi_seed_reports_and_aggregate(self, bundle):
        models, reports, aggregate = verify.multi_seed(
            bundle, seeds=(0, 1), make_regressor=lambda seed: PcnnRegressor(seed=seed, **TINY)
        )
        assert set(reports) == {0, 1}
        some_step = next(iter(aggregate))
        values = [reports[s].marker_mae[some_step] for s in (0, 1)]
        assert aggregate[some_step]["median"] == pytest.approx(float(np.median(values)))
        assert aggregate[some_step]["spread"] == pytest.approx(max(values) - min(values))

    def test_multi_seed_rerun_is_bit_identical(self, bundle):
        make = lambda seed: PcnnRegressor(seed=seed, **TINY)
        _, first, _ = verify.multi_seed(bundle, seeds=(0,), make_regressor=make)
        _, second, _ = verify.multi_seed(bundle, seeds=(0,), make_regressor=make)
        np.testing.assert_array_equal(first[0].window_mae, second[0].window_mae)


class TestRunSummary:
    def test_summary_json(self, tmp_path):
        path = tmp_path / "run.json"
        verify.write_run_summary(
            path, run_id="demo-0", config={"seed": 0, "epochs": 2},
            metrics={"val_loss": 0.0123}, consistency={"global_pass": True},
        )
        payload = json.loads(path.read_text())
        assert payload["run_id"] == "demo-0"
        assert payload["config_hash"] == verify.config_hash({"seed": 0, "epochs": 2})
        assert payload["consistency"]["global_pass"] is True

    def test_config_hash_stable_under_key_order(self):
        assert verify.config_hash({"a": 1, "b": 2}) == verify.config_hash({"b": 2, "a": 1})
