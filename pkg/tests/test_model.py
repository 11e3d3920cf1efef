import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isac_xt.model import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    DegenerateGeometryError,
    GeometricParams,
    RcsPrior,
    UserConfig,
    generate_user_channels,
    grid_from_geometry,
    grid_responses,
    grid_sizes,
    resolution_cells,
    steering_vector,
    target_response,
    target_responses,
)

GEOM_4x4 = ArrayGeometry(4, 4, 4, 4, 28e9, 480e3, 16, 16)
DESK_GEOM = ArrayGeometry(2, 2, 4, 4, 28e9, 480e3, 16, 16)


def _phase_oracle(nx, ny, theta, phi, n, geom):
    chi = 1 + n * geom.subcarrier_spacing_hz / geom.carrier_hz
    out = []
    for ix in range(nx):
        for iy in range(ny):
            ph = math.pi * chi * math.sin(phi) * (ix * math.cos(theta) + iy * math.sin(theta))
            out.append(complex(math.cos(ph), -math.sin(ph)))
    return np.array(out)


class TestSteering:
    @pytest.mark.parametrize("theta", [0.0, 0.7, -2.1])
    @pytest.mark.parametrize("n", [0, 7, 15])
    def test_zero_elevation_is_all_ones(self, theta, n):
        a = steering_vector("transmit", theta, 0.0, n, GEOM_4x4)
        np.testing.assert_array_equal(a, np.ones(16))

    def test_two_element_broadside_alternates(self):
        geom = ArrayGeometry(1, 2, 1, 1, 28e9, 480e3, 4, 1)
        a = steering_vector("transmit", math.pi / 2, math.pi / 2, 0, geom)
        np.testing.assert_allclose(a, [1, -1], atol=1e-15)

    def test_matches_scalar_phase_oracle(self):
        a = steering_vector("transmit", 0.3, 0.9, 5, GEOM_4x4)
        ref = _phase_oracle(4, 4, 0.3, 0.9, 5, GEOM_4x4)
        assert np.max(np.abs(a - ref)) <= 1e-12

    def test_receive_side_uses_receive_axes(self):
        b = steering_vector("receive", 0.4, 0.6, 3, DESK_GEOM)
        assert b.shape == (16,)
        np.testing.assert_allclose(b, _phase_oracle(4, 4, 0.4, 0.6, 3, DESK_GEOM), atol=1e-12)

    @pytest.mark.parametrize("n", [-1, 16])
    def test_subcarrier_out_of_range(self, n):
        with pytest.raises(ValueError):
            steering_vector("transmit", 0.1, 0.2, n, GEOM_4x4)

    def test_unknown_side(self):
        with pytest.raises(ValueError):
            steering_vector("sideways", 0.1, 0.2, 0, GEOM_4x4)

    @given(st.floats(-math.pi, math.pi), st.floats(0.01, math.pi - 0.01), st.integers(0, 15))
    def test_unit_modulus_and_leading_one(self, theta, phi, n):
        a = steering_vector("receive", theta, phi, n, GEOM_4x4)
        assert a[0] == 1 + 0j
        np.testing.assert_allclose(np.abs(a), 1.0, rtol=0, atol=1e-12)

    @given(st.floats(-math.pi, math.pi), st.floats(0.01, math.pi - 0.01))
    def test_first_subcarrier_is_narrowband(self, theta, phi):
        wide = steering_vector("transmit", theta, phi, 0, GEOM_4x4)
        narrow = steering_vector("transmit", theta, phi, 9, GEOM_4x4, narrowband=True)
        np.testing.assert_array_equal(wide, narrow)

    def test_chi_starts_at_one(self):
        assert GEOM_4x4.chi(0) == 1.0
        np.testing.assert_allclose(GEOM_4x4.chi()[-1], 1 + 15 * 480e3 / 28e9)


class TestGeometryValidation:
    @pytest.mark.parametrize("field,value", [("n_tx_x", 0), ("n_subcarriers", 0),
                                             ("carrier_hz", 0.0), ("subcarrier_spacing_hz", -1.0)])
    def test_rejects_bad_fields(self, field, value):
        kwargs = dict(n_tx_x=2, n_tx_y=2, n_rx_x=4, n_rx_y=4, carrier_hz=28e9,
                      subcarrier_spacing_hz=480e3, n_subcarriers=16, n_symbols=16)
        kwargs[field] = value
        with pytest.raises(ValueError):
            ArrayGeometry(**kwargs)

    def test_params_reject_negative_extent(self):
        with pytest.raises(ValueError):
            GeometricParams(0, -0.1, 0.5, 0, 10, 1)

    def test_params_reject_nonpositive_ranges(self):
        with pytest.raises(ValueError):
            GeometricParams(0, 0.1, 0.5, 0, 5, 10)

    def test_params_roundtrip_array(self):
        p = GeometricParams(0.1, 0.2, 0.3, 0.4, 25, 10)
        assert GeometricParams.from_array(p.as_array()) == p
        with pytest.raises(ValueError):
            GeometricParams.from_array([1, 2, 3])

    @pytest.mark.parametrize("var", [0.0, -1.0, float("inf"), float("nan")])
    def test_prior_rejects(self, var):
        with pytest.raises(ValueError):
            RcsPrior(var)


class TestResolution:
    def test_range_resolution_full_band(self):
        geom = ArrayGeometry(4, 4, 36, 36, 28e9, 480e3, 128, 32)
        _, _, dd = resolution_cells(geom, 0.7)
        assert dd == pytest.approx(3e8 / (2 * 128 * 480e3), rel=1e-15)
        assert dd == pytest.approx(2.441, abs=1e-3)

    def test_doubling_aperture_halves_azimuth_cell(self):
        g1 = ArrayGeometry(2, 2, 4, 4, 28e9, 480e3, 16, 16)
        g2 = ArrayGeometry(4, 2, 4, 4, 28e9, 480e3, 16, 16)
        phi0 = math.radians(45)
        assert resolution_cells(g2, phi0)[0] == resolution_cells(g1, phi0)[0] / 2

    def test_full_size_angles_direct(self):
        geom = ArrayGeometry(4, 4, 36, 36, 28e9, 480e3, 128, 32)
        phi0 = math.radians(45)
        dt, dp, _ = resolution_cells(geom, phi0)
        assert dt == pytest.approx(2 / (4 * 36 * math.sin(phi0)), rel=1e-14)
        assert dp == pytest.approx(2 / (4 * 36 * math.cos(phi0)), rel=1e-14)

    @pytest.mark.parametrize("phi0", [0.0, math.pi / 2, math.pi])
    def test_poles_raise(self, phi0):
        with pytest.raises(DegenerateGeometryError):
            resolution_cells(DESK_GEOM, phi0)

    def test_speed_of_light_constant(self):
        assert SPEED_OF_LIGHT == 3e8


class TestGridSizes:
    def test_zero_extent_gives_one(self):
        assert grid_sizes((0, 0, 0), (1, 1, 1)) == (1, 1, 1)

    def test_integer_ratio(self):
        assert grid_sizes((2.0, 4.0, 6.0), (1.0, 2.0, 3.0)) == (3, 3, 3)

    def test_fractional_ratio(self):
        assert grid_sizes((4.2, 0, 0), (1.0, 1, 1))[0] == 6

    def test_invalid(self):
        with pytest.raises(ValueError):
            grid_sizes((1, 1, 1), (0, 1, 1))
        with pytest.raises(ValueError):
            grid_sizes((-1, 1, 1), (1, 1, 1))


class TestGrid:
    def test_three_point_axis(self):
        g = grid_from_geometry(GeometricParams(0, 1, 0.5, 0, 10, 0), (3, 1, 1))
        np.testing.assert_array_equal(g.theta, [-0.5, 0, 0.5])

    def test_single_range_layer(self):
        g = grid_from_geometry(GeometricParams(0, 1, 0.5, 0.2, 10, 7.5), (2, 2, 1))
        np.testing.assert_array_equal(g.d, np.full(4, 10.0))
        assert list(g.active_mask) == [True, True, True, True, True, False]

    def test_linear_index(self):
        g = grid_from_geometry(GeometricParams(0.5, 0.4, 0.8, 0.2, 25, 5), (4, 2, 3))
        assert g.size == 24
        # one-based (p, q, r) = (2, 1, 3) sits at one-based index 9
        t = 9 - 1
        assert (g.p[t], g.q[t], g.r[t]) == (1, 0, 2)
        np.testing.assert_array_equal(g.layer(3), np.flatnonzero(g.r == 2))
        with pytest.raises(ValueError):
            g.layer(4)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))
    def test_offsets_bounded_and_centered(self, a, b, c):
        g = grid_from_geometry(GeometricParams(0.1, 0.3, 0.7, 0.2, 30, 4), (a, b, c))
        for off, size in ((g.u, a), (g.v, b), (g.w, c)):
            assert np.all(np.abs(off) <= 0.5)
            axis = np.unique(off)
            assert axis.size == size
            assert abs(axis.sum()) < 1e-12
            if size > 1:
                np.testing.assert_allclose(np.diff(axis), 1 / (size - 1))

    @given(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5),
           st.floats(-1, 1), st.floats(0.01, 1), st.floats(0.2, 1.2), st.floats(0.01, 0.3),
           st.floats(20, 40), st.floats(0.5, 10))
    def test_extent_roundtrip(self, a, b, c, th, dth, ph, dph, d0, dd):
        params = GeometricParams(th, dth, ph, dph, d0, dd)
        g = grid_from_geometry(params, (a, b, c))
        for coord, centre, extent in ((g.theta, th, dth), (g.phi, ph, dph), (g.d, d0, dd)):
            assert (coord.max() + coord.min()) / 2 == pytest.approx(centre, abs=1e-12)
            assert coord.max() - coord.min() == pytest.approx(extent, abs=1e-12)

    def test_jacobian_table(self):
        g = grid_from_geometry(GeometricParams(0.1, 0.3, 0.7, 0.0, 30, 4), (3, 1, 2))
        J = g.jacobian()
        T = g.size
        np.testing.assert_array_equal(J[:, 0], np.r_[np.ones(T), np.zeros(2 * T)])
        assert not J[:, 3].any()


class TestTargetResponse:
    params = GeometricParams(0.5, 0.4, 0.8, 0.15, 25, 5)

    def test_zero_alpha(self):
        g = grid_from_geometry(self.params, (3, 2, 2))
        assert not target_response(g, np.zeros(12), 3, DESK_GEOM).any()

    def test_single_scatterer(self):
        g = grid_from_geometry(self.params, (1, 1, 1))
        G = target_response(g, [1.0], 0, DESK_GEOM)
        b = steering_vector("receive", 0.5, 0.8, 0, DESK_GEOM)
        a = steering_vector("transmit", 0.5, 0.8, 0, DESK_GEOM)
        np.testing.assert_allclose(G, np.outer(b, a.conj()), atol=1e-14)
        np.testing.assert_allclose(np.abs(G), 1.0)
        assert np.linalg.matrix_rank(G) == 1

    def test_triple_loop_oracle(self, rng):
        g = grid_from_geometry(self.params, (4, 2, 3))
        alpha = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        n = 11
        G = target_response(g, alpha, n, DESK_GEOM)
        ref = np.zeros((16, 4), complex)
        for i in range(16):
            for j in range(4):
                for t in range(24):
                    b = steering_vector("receive", g.theta[t], g.phi[t], n, DESK_GEOM)[i]
                    a = steering_vector("transmit", g.theta[t], g.phi[t], n, DESK_GEOM)[j]
                    tau = 2 * g.d[t] / SPEED_OF_LIGHT
                    f = np.exp(-2j * np.pi * n * DESK_GEOM.subcarrier_spacing_hz * tau)
                    ref[i, j] += alpha[t] * f * b * np.conj(a)
        assert np.max(np.abs(G - ref)) <= 1e-10

    def test_wrong_alpha_length(self):
        g = grid_from_geometry(self.params, (3, 2, 2))
        with pytest.raises(ValueError):
            target_response(g, np.ones(5), 0, DESK_GEOM)

    @given(st.integers(0, 2**32 - 1))
    def test_linear_in_alpha(self, seed):
        r = np.random.default_rng(seed)
        g = grid_from_geometry(self.params, (3, 2, 2))
        resp = grid_responses(g, DESK_GEOM)
        a1, a2 = (r.standard_normal(12) + 1j * r.standard_normal(12) for _ in range(2))
        lhs = target_responses(resp, a1 + a2)
        rhs = target_responses(resp, a1) + target_responses(resp, a2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(lhs).max()))


class TestUserChannels:
    def test_pure_los_equal_magnitudes(self, rng):
        users = UserConfig(count=3, pure_los=True)
        h = generate_user_channels(DESK_GEOM, users, rng)
        assert h.shape == (16, 3, 4)
        np.testing.assert_allclose(np.abs(h), math.sqrt(users.path_gain), rtol=1e-12)

    def test_no_los_covariance(self):
        users = UserConfig(count=1, rician_factor=0.0, reference_gain_db=0.0, distance_m=1.0)
        rng = np.random.default_rng(7)
        draws = np.concatenate([generate_user_channels(DESK_GEOM, users, rng)[:, 0, :]
                                for _ in range(625)])
        assert draws.shape[0] == 10_000
        C = draws.T @ draws.conj() / draws.shape[0]
        np.testing.assert_allclose(C, users.path_gain * np.eye(4), atol=0.05)

    def test_seeded_channels_identical(self):
        users = UserConfig(count=2)
        h1 = generate_user_channels(DESK_GEOM, users, np.random.default_rng(3))
        h2 = generate_user_channels(DESK_GEOM, users, np.random.default_rng(3))
        assert h1.tobytes() == h2.tobytes()

    def test_needs_users(self, rng):
        with pytest.raises(ValueError):
            generate_user_channels(DESK_GEOM, UserConfig(count=0), rng)
