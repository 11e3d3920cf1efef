import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isac_xt.beamform import uniform_design
from isac_xt.estimate import (
    EstimatorConfig,
    ObservationSet,
    _psm_cost,
    _semi_linear,
    _Stats,
    alpha_map,
    armijo_descent,
    dictionary,
    dictionary_derivatives,
    draw_rcs,
    dsm_rcs_shrinkage,
    dsm_structured_fit,
    estimate,
    estimate_dsm,
    estimate_psm,
    estimate_ucm,
    initial_parameters,
    map_objective_and_gradient,
    parameter_errors,
    precoders_from_covariance,
    simulate_observations,
    ucm_channel_estimates,
)
from isac_xt.fisher import UcmFim
from isac_xt.model import (
    GeometricParams,
    grid_from_geometry,
    grid_responses,
    target_response,
    target_responses,
)
from isac_xt.scenario import desk_scenario


@pytest.fixture(scope="module")
def scen():
    return desk_scenario()


@pytest.fixture(scope="module")
def cov(scen):
    return uniform_design(scen)


def _noiseless(scen, cov, seed=0, alpha=None):
    rng = np.random.default_rng(seed)
    alpha = draw_rcs(scen, rng) if alpha is None else alpha
    return simulate_observations(scen, cov, alpha, rng, noise_var=0.0), alpha


def _cells(scen, params):
    return np.abs(params - scen.params.as_array()) / scen.resolutions


class TestObservations:
    def test_no_target_no_noise(self, scen, cov):
        obs, _ = _noiseless(scen, cov, alpha=np.zeros(scen.grid.size))
        assert not obs.Y.any()

    def test_matches_dictionary(self, scen, cov):
        obs, alpha = _noiseless(scen, cov)
        D = dictionary(scen.grid, scen.geometry, obs.X)
        y = obs.vector()
        assert np.linalg.norm(D @ alpha - y) <= 1e-12 * np.linalg.norm(y)

    def test_noise_variance(self, scen, cov):
        rng = np.random.default_rng(9)
        draws = [simulate_observations(scen, cov, np.zeros(12), rng, noise_var=2.0).Y
                 for _ in range(3)]
        Z = np.concatenate([d.ravel() for d in draws])
        assert Z.size >= 10_000
        assert np.mean(np.abs(Z) ** 2) == pytest.approx(2.0, rel=0.05)

    def test_seeded(self, scen, cov):
        a = simulate_observations(scen, cov, np.ones(12), np.random.default_rng(1))
        b = simulate_observations(scen, cov, np.ones(12), np.random.default_rng(1))
        assert a.Y.tobytes() == b.Y.tobytes()

    def test_precoders_square_root(self, cov):
        for W, R in zip(precoders_from_covariance(cov), cov):
            np.testing.assert_allclose(W @ W.conj().T, R, atol=1e-14)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ObservationSet(np.zeros((2, 3, 4)), np.zeros((2, 2, 5)), (), 0.0)
        with pytest.raises(ValueError):
            ObservationSet(np.zeros((2, 3, 4)), np.zeros((2, 2, 4)), (), -1.0)

    def test_precoder_mismatch(self, scen):
        with pytest.raises(ValueError):
            simulate_observations(scen, [np.eye(3)] * 16, np.zeros(12), np.random.default_rng(0))


class TestDictionary:
    def test_single_column(self, scen, rng):
        g = grid_from_geometry(scen.params, (1, 1, 1))
        X = rng.standard_normal((16, 4, 16)) + 1j * rng.standard_normal((16, 4, 16))
        D = dictionary(g, scen.geometry, X)
        expected = np.concatenate([(target_response(g, [1.0], n, scen.geometry) @ X[n]).ravel(order="F")
                                   for n in range(16)])
        np.testing.assert_allclose(D[:, 0], expected, atol=1e-12)

    def test_columns_nonzero(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        assert np.all(np.linalg.norm(dictionary(scen.grid, scen.geometry, obs.X), axis=0) > 0)

    def test_gram_oracle(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        g = scen.grid
        D = dictionary(g, scen.geometry, obs.X)
        T = g.size
        ref = np.zeros((T, T), complex)
        cols = []
        for t in range(T):
            e = np.zeros(T)
            e[t] = 1
            cols.append([target_response(g, e, n, scen.geometry) @ obs.X[n] for n in range(16)])
        for t in range(T):
            for s in range(T):
                ref[t, s] = sum(np.vdot(cols[t][n], cols[s][n]) for n in range(16))
        gram = D.conj().T @ D
        assert np.max(np.abs(gram - ref)) <= 1e-10 * np.abs(ref).max()


class TestAlphaMap:
    def test_zero_observation(self, rng):
        D = rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4))
        assert not alpha_map(D, np.zeros(20), 1.0, 1.0).any()

    def test_weak_prior_orthonormal(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4)))
        y = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        np.testing.assert_allclose(alpha_map(Q, y, 0.7, 1e15), Q.conj().T @ y, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_minimizes_map_cost(self, seed):
        r = np.random.default_rng(seed)
        D = r.standard_normal((30, 5)) + 1j * r.standard_normal((30, 5))
        y = r.standard_normal(30) + 1j * r.standard_normal(30)
        s2, a2 = 0.5, 2.0

        def cost(a):
            return np.sum(np.abs(y - D @ a) ** 2) / s2 + np.sum(np.abs(a) ** 2) / a2

        best = alpha_map(D, y, s2, a2)
        c0 = cost(best)
        for _ in range(20):
            d = r.standard_normal(5) + 1j * r.standard_normal(5)
            assert cost(best + 1e-3 * d) >= c0 - 1e-12 * abs(c0)

    def test_no_worse_than_truth(self, scen, cov):
        rng = np.random.default_rng(2)
        alpha = draw_rcs(scen, rng)
        obs = simulate_observations(scen, cov, alpha, rng)
        D = dictionary(scen.grid, scen.geometry, obs.X)
        y = obs.vector()
        s2, a2 = obs.noise_var, scen.prior.variance

        def cost(a):
            return np.sum(np.abs(y - D @ a) ** 2) / s2 + np.sum(np.abs(a) ** 2) / a2

        assert cost(alpha_map(D, y, s2, a2)) <= cost(alpha)


class TestObjective:
    def _problem(self, scen, cov, noise=1.0, seed=3):
        rng = np.random.default_rng(seed)
        alpha = draw_rcs(scen, rng)
        return simulate_observations(scen, cov, alpha, rng, noise_var=noise)

    def _dense(self, scen, X, y, params, s2, a2):
        g = grid_from_geometry(GeometricParams.from_array(params), scen.grid.sizes)
        return map_objective_and_gradient(dictionary(g, scen.geometry, X),
                                          dictionary_derivatives(g, scen.geometry, X), y, s2, a2)

    def test_gradient_finite_differences(self, scen, cov):
        obs = self._problem(scen, cov, noise=scen.noise_sense_w)
        y = obs.vector()
        s2, a2 = obs.noise_var, scen.prior.variance
        x0 = scen.params.as_array() + 0.2 * scen.resolutions * np.array([1, -1, 0.5, 1, -0.7, 0.3])
        _, grad = self._dense(scen, obs.X, y, x0, s2, a2)
        for i in range(6):
            h = 1e-5 * scen.resolutions[i]
            e = np.zeros(6)
            e[i] = h
            fd = (self._dense(scen, obs.X, y, x0 + e, s2, a2)[0]
                  - self._dense(scen, obs.X, y, x0 - e, s2, a2)[0]) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-5 * abs(grad[i])

    def test_core_matches_dense_form(self, scen, cov):
        obs = self._problem(scen, cov, noise=scen.noise_sense_w)
        s2, a2 = obs.noise_var, scen.prior.variance
        x0 = scen.params.as_array() + 0.1 * scen.resolutions
        J, grad = self._dense(scen, obs.X, obs.vector(), x0, s2, a2)
        g = grid_from_geometry(GeometricParams.from_array(x0), scen.grid.sizes)
        Rxx, Ryx = obs.statistics()
        Jc, gc, _ = _semi_linear(_Stats(Rxx, Ryx, s2 / a2), grid_responses(g, scen.geometry))
        assert Jc == pytest.approx(s2 * J, rel=1e-9)
        np.testing.assert_allclose(g.jacobian().T @ gc, s2 * grad, rtol=1e-7,
                                   atol=1e-9 * s2 * np.abs(grad).max())

    def test_stationary_at_truth_without_noise(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        y = obs.vector()
        _, grad = self._dense(scen, obs.X, y, scen.params.as_array(), 1.0, 1e14)
        assert np.linalg.norm(grad * scen.resolutions) <= 1e-6 * (1 + np.vdot(y, y).real)

    @given(st.floats(0, 2 * np.pi))
    @settings(max_examples=10)
    def test_phase_invariance(self, c):
        scen = desk_scenario()
        obs = self._problem(scen, uniform_design(scen), noise=scen.noise_sense_w)
        y = obs.vector()
        x0 = scen.params.as_array()
        args = (scen.noise_sense_w, scen.prior.variance)
        J1 = self._dense(scen, obs.X, y, x0, *args)[0]
        J2 = self._dense(scen, obs.X, np.exp(1j * c) * y, x0, *args)[0]
        assert J2 == pytest.approx(J1, rel=1e-10)

    def test_needs_positive_noise(self, rng):
        with pytest.raises(ValueError):
            map_objective_and_gradient(np.eye(2), np.zeros((1, 2, 2)), np.ones(2), 0.0, 1.0)


class TestDescent:
    def test_quadratic(self):
        A = np.diag([1.0, 10.0])
        fun = lambda x: (0.5 * x @ A @ x, A @ x)  # noqa: E731
        for direction in ("bfgs", "gradient"):
            cfg = EstimatorConfig(direction=direction, max_iter=2000)
            out = armijo_descent(fun, np.array([3.0, -2.0]), np.ones(2), cfg)
            assert out.status == "converged"
            np.testing.assert_allclose(out.x, 0, atol=1e-4)
            assert all(b <= a for a, b in zip(out.trace, out.trace[1:]))

    def test_fixed_coordinates(self):
        fun = lambda x: (float(np.sum((x - 1) ** 2)), 2 * (x - 1))  # noqa: E731
        out = armijo_descent(fun, np.zeros(3), np.ones(3), EstimatorConfig(),
                             free=np.array([True, False, True]))
        assert out.x[1] == 0.0
        np.testing.assert_allclose(out.x[[0, 2]], 1, atol=1e-5)

    def test_invalid_start(self):
        with pytest.raises(ValueError):
            armijo_descent(lambda x: (np.inf, x), np.zeros(2), np.ones(2), EstimatorConfig())

    @pytest.mark.parametrize("kwargs", [dict(shrink=1.0), dict(tol=0), dict(direction="newton"),
                                        dict(init_mode="oracle"), dict(max_iter=0),
                                        dict(init_perturbation=-1.0)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            EstimatorConfig(**kwargs)


class TestParametricEstimator:
    def test_truth_start_is_fixed_point(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        res = estimate_psm(obs, scen)
        assert np.all(_cells(scen, res.params) <= 1e-8)
        assert res.status == "converged"

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_recovers_from_perturbed_start(self, scen, cov, seed):
        obs, alpha = _noiseless(scen, cov, seed=seed)
        res = estimate_psm(obs, scen, rng=np.random.default_rng(100 + seed))
        assert np.all(_cells(scen, res.init) <= 0.1 + 1e-12)
        assert np.all(_cells(scen, res.params) <= 1e-4)
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        np.testing.assert_allclose(res.alpha, alpha, atol=1e-6 * np.abs(alpha).max())

    def test_symbol_draw_irrelevant_without_noise(self, scen, cov):
        rng = np.random.default_rng(5)
        alpha = draw_rcs(scen, rng)
        x0 = initial_parameters(scen, EstimatorConfig(), np.random.default_rng(6))
        outs = []
        for seed in (7, 8):
            obs = simulate_observations(scen, cov, alpha, np.random.default_rng(seed), noise_var=0.0)
            outs.append(estimate_psm(obs, scen, init=x0).params)
        assert np.all(np.abs(outs[0] - outs[1]) / scen.resolutions <= 1e-6)

    def test_dispatch_and_errors(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        res = estimate("PSM", obs, scen)
        errs = parameter_errors(res, scen)
        assert set(errs) == {"theta0", "delta_theta", "phi0", "delta_phi", "d0", "delta_d"}
        assert res.geometric == GeometricParams.from_array(res.params)
        with pytest.raises(ValueError):
            estimate("mle", obs, scen)

    def test_blind_start_near_truth(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        cfg = EstimatorConfig(init_mode="blind", coarse_grid=(3, 3, 3), coarse_span_cells=1.0)
        res = estimate_psm(obs, scen, cfg)
        np.testing.assert_array_equal(res.init, scen.params.as_array())


class TestUnstructuredEstimator:
    def test_exact_stage_one_and_truth(self, scen, cov):
        obs, alpha = _noiseless(scen, cov)
        G_hat = ucm_channel_estimates(obs)
        G = target_responses(grid_responses(scen.grid, scen.geometry), alpha)
        assert np.max(np.abs(G_hat - G)) <= 1e-10 * np.abs(G).max()
        res = estimate_ucm(obs, scen)
        assert np.all(_cells(scen, res.params) <= 1e-8)

    def test_reconstruction_matches_response(self, scen, rng):
        alpha = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        stacked = target_responses(grid_responses(scen.grid, scen.geometry), alpha)
        for n in (0, 5, 15):
            np.testing.assert_allclose(stacked[n], target_response(scen.grid, alpha, n, scen.geometry),
                                       atol=1e-10)

    def test_truth_is_local_minimum(self, scen, cov):
        obs, _ = _noiseless(scen, cov)
        G_hat = ucm_channel_estimates(obs)
        weight = UcmFim(cov, obs.n_symbols, 1.0)
        stats = _Stats(obs.n_symbols * cov, weight.apply(G_hat), 0.0)
        _, value, _ = _psm_cost(stats, scen)
        truth = scen.params.as_array()
        base = value(truth)
        r = np.random.default_rng(11)
        for _ in range(10):
            assert value(truth + 0.05 * scen.resolutions * r.standard_normal(6)) >= base

    def test_singular_waveform_names_subcarrier(self, scen):
        cov = np.zeros((16, 4, 4), complex)
        cov[:] = np.eye(4) / 64
        cov[3] = np.diag([1.0, 0, 0, 0]) / 16
        obs = simulate_observations(scen, cov, np.ones(12), np.random.default_rng(0))
        with pytest.raises(ValueError, match="subcarrier 3"):
            estimate_ucm(obs, scen)


class TestDiscreteEstimator:
    def test_truth_start_exact(self, scen, cov):
        obs, alpha = _noiseless(scen, cov)
        res = estimate_dsm(obs, scen)
        assert np.all(_cells(scen, res.params) <= 1e-8)
        np.testing.assert_allclose(res.stage1["coordinates"], scen.grid.coordinates(), atol=1e-9)
        np.testing.assert_allclose(res.alpha, alpha, atol=1e-8 * np.abs(alpha).max())

    @given(st.integers(0, 2**32 - 1))
    def test_structured_fit_fixed_point(self, seed):
        r = np.random.default_rng(seed)
        grid = desk_scenario().grid
        xi = np.array([0.4, 0.3, 0.8, 0.1, 25.0, 8.0]) + r.uniform(-0.05, 0.05, 6)
        A = r.standard_normal((36, 36))
        F = A @ A.T + np.eye(36)
        vartheta = grid.jacobian() @ xi
        np.testing.assert_allclose(dsm_structured_fit(vartheta, F, grid), xi, rtol=1e-10)
        np.testing.assert_allclose(dsm_structured_fit(vartheta, 1e6 * F, grid), xi, rtol=1e-10)

    def test_identity_weight_is_least_squares(self, rng):
        grid = desk_scenario().grid
        vartheta = rng.standard_normal(36)
        U = grid.jacobian()
        ols = np.linalg.lstsq(U, vartheta, rcond=None)[0]
        np.testing.assert_allclose(dsm_structured_fit(vartheta, np.eye(36), grid), ols, atol=1e-12)

    def test_scale_invariance(self, rng):
        grid = desk_scenario().grid
        A = rng.standard_normal((36, 36))
        F = A @ A.T + np.eye(36)
        v = rng.standard_normal(36)
        np.testing.assert_allclose(dsm_structured_fit(v, 37.5 * F, grid), dsm_structured_fit(v, F, grid),
                                   rtol=1e-10)

    def test_degenerate_axis_reduced(self, rng):
        grid = grid_from_geometry(GeometricParams(0.4, 0.3, 0.8, 0.0, 25, 8), (3, 1, 2))
        xi = np.array([0.4, 0.3, 0.8, 0.0, 25.0, 8.0])
        out = dsm_structured_fit(grid.jacobian() @ xi, np.eye(3 * grid.size), grid)
        np.testing.assert_allclose(out, xi, atol=1e-12)

    def test_shrinkage_limits(self, rng):
        T = 4
        a = rng.standard_normal(T) + 1j * rng.standard_normal(T)
        B = rng.standard_normal((2 * T, 2 * T))
        F = B @ B.T + np.eye(2 * T)
        np.testing.assert_allclose(dsm_rcs_shrinkage(a, 1e12 * F, 1.0), a, rtol=1e-9)
        np.testing.assert_allclose(dsm_rcs_shrinkage(a, F, 0.0), a, rtol=1e-12)
        assert np.linalg.norm(dsm_rcs_shrinkage(a, F, 10.0)) < np.linalg.norm(a)
