import math

import numpy as np
import pytest

from isac_xt import fisher
from isac_xt.ambiguity import SidelobeSet, build_sidelobe_set
from isac_xt.beamform import (
    BeamformerSolution,
    BeamformingInfeasible,
    DegenerateUserError,
    build_dsm_problem,
    build_psm_problem,
    build_ucm_problem,
    beampattern,
    check_sinr_feasibility,
    design,
    min_power_sinr,
    recover_solution,
    sinr_from_beamformers,
    sinr_from_covariances,
    solve_design,
    uniform_design,
    verify_solution,
)
from isac_xt.fisher import CovarianceSet
from isac_xt.scenario import desk_scenario


@pytest.fixture(scope="module")
def small():
    return desk_scenario().with_geometry(n_subcarriers=4).replace(grid_override=(2, 1, 2))


@pytest.fixture(scope="module")
def small_designs(small):
    return {m: design(small, m) for m in ("psm", "dsm", "ucm")}


def _ucm_metric(sol, scenario):
    g = scenario.geometry
    return sol.objective * g.n_symbols / (scenario.noise_sense_w * g.n_rx)


class TestUnstructuredDesign:
    def test_single_subcarrier_radar_only(self):
        s = desk_scenario().radar_only().with_geometry(n_subcarriers=1)
        sol = design(s, "ucm")
        Nt = s.geometry.n_tx
        np.testing.assert_allclose(sol.R[0], np.eye(Nt) / Nt, atol=1e-6)
        assert _ucm_metric(sol, s) == pytest.approx(Nt ** 2 / s.power_w, rel=1e-6)

    def test_doubling_power_halves_objective(self):
        s = desk_scenario().radar_only().with_geometry(n_subcarriers=2)
        a = design(s, "ucm").objective
        b = design(s.replace(power_w=2.0), "ucm").objective
        assert b == pytest.approx(a / 2, rel=1e-6)

    def test_users_served(self, small_designs):
        assert small_designs["ucm"].report.sinr_ok
        assert small_designs["ucm"].report.power_ok


class TestParametricDesign:
    def test_radar_only_objective_is_weighted_crb(self, small):
        s = small.radar_only()
        prob = build_psm_problem(s, sidelobes=build_sidelobe_set(s.geometry, s.params, 0),
                                 weights=np.ones(6))
        sol = solve_design(prob)
        fim = fisher.psm_geometric_fim(sol.R, s.grid, s.prior, s.geometry, s.noise_sense_w)
        assert fisher.weighted_crb(fim, np.ones(6)) == pytest.approx(sol.objective, rel=1e-5)

    def test_loose_threshold_matches_no_constraint(self, small):
        free = solve_design(build_psm_problem(
            small, sidelobes=build_sidelobe_set(small.geometry, small.params, 0))).objective
        loose = solve_design(build_psm_problem(
            small, sidelobes=build_sidelobe_set(small.geometry, small.params, 5, epsilon=1e6))).objective
        assert loose == pytest.approx(free, rel=1e-5)

    def test_constraints_hold(self, small_designs):
        rep = small_designs["psm"].report
        assert small_designs["psm"].status == "optimal"
        assert rep.sinr_ok and rep.power_ok and rep.sidelobes_ok
        assert np.all(rep.sinr_db >= rep.sinr_target_db - 0.01)

    def test_relaxation_is_lower_bound(self, small, small_designs):
        for model in ("psm",):
            sol = small_designs[model]
            fim = fisher.psm_geometric_fim(sol.R, small.grid, small.prior, small.geometry,
                                           small.noise_sense_w)
            crb = fisher.weighted_crb(fim, small.weight_diag)
            assert crb >= sol.objective - 1e-5 * abs(sol.objective)

    def test_objective_monotone_in_threshold(self, small):
        objs = [design(small.replace(epsilon_psm=e), "psm").objective for e in (3e-3, 1e-2, 1e-1)]
        assert objs[0] >= objs[1] * (1 - 1e-6) and objs[1] >= objs[2] * (1 - 1e-6)

    def test_radar_only_not_worse(self, small, small_designs):
        radar = design(small.radar_only(), "psm").objective
        assert radar <= small_designs["psm"].objective * (1 + 1e-6)


class TestDiscreteDesign:
    def test_single_scatterer_matches_parametric(self):
        s = desk_scenario().with_geometry(n_subcarriers=4).replace(grid_override=(1, 1, 1))
        assert design(s, "dsm").objective == pytest.approx(design(s, "psm").objective, rel=1e-5)

    def test_empty_sets_add_no_rows(self, small):
        empty = [SidelobeSet((), d, 0.01, 1.0, r + 1) for r, d in enumerate(np.unique(small.grid.d))]
        a = build_dsm_problem(small, sidelobes=empty).problem
        b = build_dsm_problem(small, sidelobes=[]).problem
        assert a.n_rows == b.n_rows and a.n_vars == b.n_vars

    def test_constraints_hold(self, small_designs):
        sol = small_designs["dsm"]
        assert sol.status == "optimal"
        assert sol.report.ok


class TestRecovery:
    def test_rank_one_fixed_point(self, small):
        rng = np.random.default_rng(1)
        N, K, Nt = small.channels.shape
        v = rng.standard_normal((N, K, Nt)) + 1j * rng.standard_normal((N, K, Nt))
        Ru = np.einsum("nki,nkj->nkij", v, v.conj())
        R = Ru.sum(axis=1) + 0.1 * np.eye(Nt)
        w, factors, Ru1, clamp = recover_solution(R, Ru, small)
        for n in range(N):
            for k in range(K):
                ph = np.vdot(v[n, k], w[n, k])
                assert abs(abs(ph) - np.vdot(v[n, k], v[n, k]).real) <= 1e-10 * abs(ph)
                np.testing.assert_allclose(w[n, k], v[n, k] * ph / abs(ph), atol=1e-10)
        assert clamp == 0.0

    def test_preserves_received_powers_and_sinr(self, small, small_designs):
        sol = small_designs["psm"]
        H = small.channels
        relaxed = sol.diagnostics["relaxed_user_covariances"]
        num_relaxed = np.einsum("nki,nkij,nkj->nk", H.conj(), relaxed, H).real
        num_w = np.abs(np.einsum("nki,nki->nk", H.conj(), sol.beamformers)) ** 2
        np.testing.assert_allclose(num_w, num_relaxed, rtol=1e-8)
        sinr_raw = sinr_from_covariances(sol.R, relaxed, H, small.noise_comm_w)
        sinr_w = sinr_from_beamformers(sol.beamformers, sol.sensing_factors, H, small.noise_comm_w)
        assert np.max(np.abs(10 * np.log10(sinr_w / sinr_raw))) <= 1e-6

    def test_factors_rebuild_covariance(self, small_designs):
        sol = small_designs["psm"]
        for n, Rn in enumerate(sol.R):
            W = np.concatenate([sol.beamformers[n].T, sol.sensing_factors[n]], axis=1)
            assert np.linalg.norm(W @ W.conj().T - Rn) <= 1e-6 * np.linalg.norm(Rn)

    def test_degenerate_user(self, small):
        N, K, Nt = small.channels.shape
        with pytest.raises(DegenerateUserError, match="subcarrier"):
            recover_solution(np.eye(Nt)[None].repeat(N, 0), np.zeros((N, K, Nt, Nt)), small)


class TestVerify:
    def _solution(self, scenario, w, factors, R):
        return BeamformerSolution(CovarianceSet(R), w, factors, 0.0, "psm", "optimal")

    def test_zero_beamformers(self, small):
        N, K, Nt = small.channels.shape
        sol = self._solution(small, np.zeros((N, K, Nt), complex),
                             [np.zeros((Nt, 0), complex)] * N, np.zeros((N, Nt, Nt), complex))
        rep = verify_solution(sol, small)
        assert np.all(np.isneginf(rep.sinr_db))
        assert rep.power == 0.0
        assert len(rep.failed_users) == N * K
        assert not rep.sinr_ok

    def test_half_power(self, small, small_designs):
        sol = small_designs["psm"]
        half = self._solution(small, sol.beamformers / math.sqrt(2),
                              [f / math.sqrt(2) for f in sol.sensing_factors], sol.R / 2)
        assert verify_solution(half, small).power == pytest.approx(sol.report.power / 2, rel=1e-15)


class TestFeasibility:
    def test_min_power_single_user(self):
        h = np.array([[1.0, 1.0j]]) * 0.5
        # one user: matched filter needs gamma * noise / ||h||^2
        assert min_power_sinr(h, np.array([10.0]), 1e-3) == pytest.approx(10 * 1e-3 / 0.5, rel=1e-9)

    def test_budget_too_small(self, small):
        tiny = small.replace(power_w=1e-9)
        with pytest.raises(BeamformingInfeasible, match="budget"):
            check_sinr_feasibility(tiny)
        with pytest.raises(BeamformingInfeasible):
            design(tiny, "ucm")

    def test_unknown_model(self, small):
        with pytest.raises(ValueError):
            design(small, "xyz")


def test_beampattern_of_uniform_design(small):
    R = uniform_design(small)
    vals = beampattern(R, small, np.linspace(-1, 1, 5), [0.3, 0.8])
    assert vals.shape == (5, 2)
    # isotropic covariance radiates P/N_t * N_t per subcarrier in every direction
    np.testing.assert_allclose(vals, small.power_w, rtol=1e-12)


def test_build_times_recorded(small):
    assert build_ucm_problem(small).build_seconds >= 0
