import json
import math

import numpy as np
import pytest

from isac_xt import harness
from isac_xt.harness import (
    ACCURACY_SCHEMA,
    RESULT_SCHEMA,
    RUNTIME_SCHEMA,
    ResultRow,
    ResultTable,
    SweepSpec,
    angular_profile,
    emit_outputs,
    load_sweeps,
    monotone_trend_test,
    point_scenario,
    run_sweep,
    trial_streams,
)
from isac_xt.model import PARAM_NAMES
from isac_xt.scenario import ConfigError, desk_scenario


@pytest.fixture(scope="module")
def small():
    return desk_scenario().with_geometry(n_subcarriers=4).replace(grid_override=(2, 1, 2))


def _row(**kw):
    base = dict(axis="snr_db", value=10.0, optimizer="psm", estimator="psm", valid=True, trials=3,
                failures=0, rcrb_angle=0.1, rmse_angle=0.2, rcrb_range=0.3, rmse_range=0.4,
                mapped_rcrb_angle=0.1, mapped_rcrb_range=0.3, sinr_margin_db=0.0,
                optimizer_s=1.5, estimator_s=0.25,
                rmse=(0.1, 0.1, math.nan, 0.1, 0.2, 0.2), rcrb=(0.05,) * 6, note="")
    base.update(kw)
    return ResultRow(**base)


class TestSweepSpec:
    def test_schema_strings(self):
        assert RESULT_SCHEMA.startswith("axis,value,optimizer,estimator,valid,trials,failures")
        assert "optimizer_s" in RESULT_SCHEMA and "optimizer_s" not in ACCURACY_SCHEMA
        assert all(f"rmse_{p}" in ACCURACY_SCHEMA for p in PARAM_NAMES)
        assert RUNTIME_SCHEMA.split(",")[:2] == ["axis", "value"]
        assert RESULT_SCHEMA.endswith(",note")

    @pytest.mark.parametrize("doc", [
        {"axis": "bandwidth", "values": [1]},
        {"axis": "snr_db", "values": []},
        {"axis": "snr_db", "values": [0], "trials": 0},
        {"axis": "snr_db", "values": [0], "models": ["xyz"]},
        {"axis": "n_rx", "values": [2.5]},
        {"axis": "snr_db", "values": [0], "colour": "red"},
    ])
    def test_invalid(self, doc):
        with pytest.raises(ConfigError):
            SweepSpec.from_dict(doc)

    def test_combos(self):
        matched = SweepSpec("snr_db", (0.0,), estimators=None)
        assert matched.combos == [("psm", "psm"), ("dsm", "dsm"), ("ucm", "ucm")]
        cross = SweepSpec("snr_db", (0.0,), models=("psm", "ucm"), estimators=("psm",))
        assert cross.combos == [("psm", "psm"), ("ucm", "psm")]

    def test_load_single_and_list(self, tmp_path):
        one = tmp_path / "one.json"
        one.write_text(json.dumps({"axis": "snr_db", "values": [0, 10], "trials": 5}))
        many = tmp_path / "many.json"
        many.write_text(json.dumps({"sweeps": [{"axis": "snr_db", "values": [0]},
                                               {"axis": "n_rx", "values": [2, 3], "estimators": None}]}))
        (s,) = load_sweeps(one)
        assert s.values == (0, 10) and s.trials == 5
        a, b = load_sweeps(many)
        assert a.axis == "snr_db" and b.estimators is None

    def test_load_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_sweeps(p)


class TestPointScenario:
    def test_axes(self, small):
        assert point_scenario(small, "snr_db", 5.0).sensing_snr_db == pytest.approx(5.0)
        assert point_scenario(small, "sinr_db", 3.0).sinr_db == 3.0
        g = point_scenario(small, "n_rx", 3).geometry
        assert (g.n_rx_x, g.n_rx_y) == (3, 3)
        assert point_scenario(small, "n_subcarriers", 2).geometry.n_subcarriers == 2

    def test_radar_only(self, small):
        assert point_scenario(small, "snr_db", 0.0, radar_only=True).n_users == 0


class TestStreams:
    def test_reproducible_and_distinct(self):
        a = trial_streams(7, 1, 2)
        b = trial_streams(7, 1, 2)
        assert set(a) == {"rcs", "symbols", "noise", "init"}
        for k in a:
            assert a[k].random() == b[k].random()
        c = trial_streams(7, 1, 3)
        assert trial_streams(7, 1, 2)["noise"].random() != c["noise"].random()
        s = trial_streams(7, 1, 2)
        assert s["rcs"].random() != s["noise"].random()


class TestRunSweep:
    def test_noise_free_truth_start_is_exact(self, small):
        spec = SweepSpec("snr_db", (20.0,), trials=1, models=("psm",), estimators=None,
                         noise_free=True, init_perturbation=0.0)
        (row,) = run_sweep(spec, small, seed=3).rows
        assert row.valid and row.trials == 1 and row.failures == 0
        cells = small.resolutions
        active = small.grid.active_mask
        err = np.sqrt(row.sq_errors[0])[active] / np.asarray(cells)[active]
        assert np.all(err <= 1e-8)
        assert row.rmse_angle <= 1e-8 and row.rmse_range <= 1e-6

    def test_duplicate_values_give_identical_rows(self, small):
        spec = SweepSpec("snr_db", (15.0, 15.0), trials=2, models=("psm",))
        a, b = run_sweep(spec, small, seed=1).rows
        # common random numbers are keyed by sweep index, so only the design and bound coincide
        np.testing.assert_array_equal(a.rcrb, b.rcrb)
        assert a.mapped_rcrb_angle == b.mapped_rcrb_angle

    def test_jobs_do_not_change_results(self, small):
        spec = SweepSpec("snr_db", (10.0,), trials=3, models=("psm",))
        one = run_sweep(spec, small, seed=5, jobs=1).rows[0]
        three = run_sweep(spec, small, seed=5, jobs=3).rows[0]
        np.testing.assert_array_equal(one.sq_errors, three.sq_errors)
        np.testing.assert_array_equal(one.rmse, three.rmse)

    def test_bound_is_psm_and_mapped_is_model(self, small):
        spec = SweepSpec("snr_db", (10.0,), trials=1, models=("psm", "ucm"), estimators=("psm",))
        psm, ucm = run_sweep(spec, small, seed=0).rows
        assert psm.rcrb_angle == pytest.approx(psm.mapped_rcrb_angle)
        assert ucm.optimizer == "ucm" and ucm.estimator == "psm"
        assert np.isfinite(ucm.mapped_rcrb_angle)

    def test_infeasible_point_is_recorded(self, small):
        tight = small.replace(power_w=1e-20)
        spec = SweepSpec("snr_db", (10.0,), trials=1, models=("psm",))
        (row,) = run_sweep(spec, tight, seed=0).rows
        assert not row.valid and row.note
        assert math.isnan(row.rmse_angle)


class TestTables:
    def test_csv_round_trip(self, tmp_path):
        t = ResultTable([_row(), _row(value=20.0, optimizer="dsm", note="2 estimator failures")])
        path = t.to_csv(tmp_path / "t.csv")
        back = ResultTable.from_csv(path)
        assert len(back.rows) == 2
        for a, b in zip(t.rows, back.rows):
            assert a.value == b.value and a.optimizer == b.optimizer and a.note == b.note
            np.testing.assert_array_equal(a.rmse, b.rmse)
            assert a.optimizer_s == b.optimizer_s

    def test_accuracy_csv_drops_times(self, tmp_path):
        path = ResultTable([_row()]).to_csv(tmp_path / "t.csv", timing=False)
        header = path.read_text().splitlines()[0]
        assert header == ACCURACY_SCHEMA
        back = ResultTable.from_csv(path)
        assert math.isnan(back.rows[0].optimizer_s)

    def test_empty_table(self, tmp_path):
        path = ResultTable().to_csv(tmp_path / "empty.csv")
        assert path.read_text() == RESULT_SCHEMA + "\n"

    def test_select_and_valid(self):
        t = ResultTable([_row(), _row(optimizer="dsm", valid=False)])
        assert not t.valid
        assert len(t.select(optimizer="dsm")) == 1
        assert len(t.select(estimator="psm")) == 2

    def test_runtime_ratios(self):
        rows = [_row(optimizer=m, estimator=m, optimizer_s=s, estimator_s=s / 10)
                for m, s in (("psm", 1.0), ("dsm", 4.0), ("ucm", 2.0))]
        (r,) = harness.runtime_rows([ResultTable(rows)])
        named = dict(zip(RUNTIME_SCHEMA.split(","), r))
        assert named["optimizer_ratio_psm_dsm"] == pytest.approx(0.25)
        assert named["estimator_ratio_psm_ucm"] == pytest.approx(0.5)

    def test_emit_outputs(self, tmp_path):
        t = ResultTable([_row(), _row(axis="sinr_db")])
        extra = {"fig9_extra": (["a", "b"], [[1, 2.5]])}
        written = emit_outputs([t], tmp_path, extra)
        names = sorted(p.name for p in written)
        assert names == ["fig4_snr.csv", "fig5_sinr.csv", "fig7_runtime.csv", "fig9_extra.csv"]
        assert (tmp_path / "fig4_snr.csv").read_text().splitlines()[0] == ACCURACY_SCHEMA
        assert (tmp_path / "fig7_runtime.csv").read_text().splitlines()[0] == RUNTIME_SCHEMA
        assert (tmp_path / "fig9_extra.csv").read_text() == "a,b\n1,2.5\n"


class TestTrend:
    def _errors(self, rng, scales, n=200):
        return [np.tile((s * rng.standard_normal((n, 1))) ** 2, (1, 6)) for s in scales]

    def test_decreasing_passes(self, rng):
        ok, lows = monotone_trend_test(self._errors(rng, [4.0, 2.0, 1.0, 0.5]))
        assert ok and len(lows) == 3

    def test_flat_passes(self, rng):
        ok, _ = monotone_trend_test(self._errors(rng, [1.0, 1.0, 1.0]))
        assert ok

    def test_clear_increase_fails(self, rng):
        ok, lows = monotone_trend_test(self._errors(rng, [1.0, 1.0, 3.0]))
        assert not ok and lows[-1] > 0

    def test_deterministic(self, rng):
        e = self._errors(rng, [2.0, 1.0])
        assert monotone_trend_test(e, seed=4) == monotone_trend_test(e, seed=4)


class TestAngularProfile:
    def test_sums_over_range_layers(self, small):
        grid = small.grid
        alpha = np.arange(1, grid.size + 1) * (1 - 1j)
        th, ph, mat = angular_profile(alpha, grid)
        assert mat.shape == (grid.t_theta, grid.t_phi)
        assert mat.sum() == pytest.approx(np.abs(alpha).sum())
        for t in range(grid.size):
            assert th[grid.p[t]] == grid.theta[t]
            assert ph[grid.q[t]] == grid.phi[t]
        expected = np.zeros_like(mat)
        for t in range(grid.size):
            expected[grid.p[t], grid.q[t]] += abs(alpha[t])
        np.testing.assert_allclose(mat, expected)

    def test_shape_check(self, small):
        with pytest.raises(ValueError):
            angular_profile(np.ones(small.grid.size + 1), small.grid)

    def test_profile_rows(self, small):
        grid = small.grid
        header, rows = harness.profile_rows(grid, {"truth": np.ones(grid.size), "est": np.zeros(grid.size)})
        assert header[:2] == ["source", "theta_deg"] and len(header) == 2 + grid.t_phi
        assert len(rows) == 2 * grid.t_theta
        assert {r[0] for r in rows} == {"truth", "est"}
