import numpy as np
import pytest

from weighted_rml.darcy import (
    DarcyModel,
    DarcyProblem,
    DarcySolveError,
    PermTransform,
    bilinear_operator,
    default_obs_points,
    jacobian_rows_adjoint,
    load_bundle,
    misfit_gradient_adjoint,
    observe,
    save_bundle,
    solve_pressure,
    synthetic_observations,
    write_field_csv,
)
from weighted_rml.forward import ObservationSpec
from weighted_rml.mesh import GridSpec
from weighted_rml.oracle import fd_directional, fd_gradient, fd_pressure_oracle
from weighted_rml.prior import MaternSpec, build_matern_prior


def misfit(problem, obs, m):
    r = obs.whiten(observe(problem, solve_pressure(problem, m)) - obs.d_obs)
    return 0.5 * float(r @ r)


class TestTransforms:
    grid = np.arange(-3.0, 3.0 + 1e-9, 1e-3)

    @pytest.mark.parametrize("kind", PermTransform.KINDS)
    def test_positive_and_derivative(self, kind):
        t = PermTransform(kind)
        m = np.linspace(-3, 3, 41)
        assert np.all(t.forward(np.linspace(-40, 40, 101)) > 0)
        h = 1e-6
        fd = (t.forward(m + h) - t.forward(m - h)) / (2 * h)
        np.testing.assert_allclose(t.derivative(m), fd, rtol=1e-6, atol=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            PermTransform("cubic")

    def test_monotonic_strictly_increasing(self):
        lk = PermTransform("monotonic_tanh").log_kappa(self.grid)
        assert np.all(np.diff(lk) > 0)
        assert lk[0] == pytest.approx(-2.0, abs=1e-3) and lk[-1] == pytest.approx(2.0, abs=1e-3)

    def test_nonmonotonic_shape(self):
        t = PermTransform("nonmonotonic_tanh")
        d = t.log_kappa_derivative(self.grid)
        changes = np.flatnonzero(np.diff(np.sign(d)) != 0)
        # rises from about -2 to a single interior peak, then settles near 0
        assert len(changes) == 1
        peak = self.grid[changes[0]]
        assert 0.0 < peak < 0.1
        assert t.log_kappa(-3.0) == pytest.approx(-2.0, abs=1e-3)
        assert t.log_kappa(3.0) == pytest.approx(0.0, abs=1e-3)
        assert t.log_kappa(peak) > 1.8


class TestPressure:
    def test_uniform_permeability(self):
        p = DarcyProblem(GridSpec(9, 7), PermTransform("lognormal"), 2.0)
        u = solve_pressure(p, np.zeros(63))
        np.testing.assert_allclose(u.values, 2.0 * p.grid.coords[:, 1], atol=1e-10)

    def test_doubling_kappa_halves_pressure(self, rng):
        p = DarcyProblem(GridSpec(8, 8), PermTransform("lognormal"), 1.0)
        m = rng.standard_normal(64)
        np.testing.assert_allclose(solve_pressure(p, m + np.log(2.0)).values, 0.5 * solve_pressure(p, m).values, rtol=1e-10, atol=1e-13)

    def test_residual(self, darcy10, rng):
        m = rng.standard_normal(100)
        u = solve_pressure(darcy10, m)
        assert darcy10.residual_norm(m, u) < 1e-10 * np.linalg.norm(darcy10.load)

    def test_maximum_principle(self, darcy10, rng):
        u = solve_pressure(darcy10, 1.5 * rng.standard_normal(100)).values
        bottom = darcy10.grid.edge_nodes("bottom")
        top = darcy10.grid.edge_nodes("top")
        interior = np.setdiff1d(np.arange(100), np.union1d(bottom, top))
        # no interior sources: extremes sit on the boundary
        lo, hi = u[np.union1d(bottom, top)].min(), u[np.union1d(bottom, top)].max()
        assert np.all(u[interior] >= lo - 1e-8) and np.all(u[interior] <= hi + 1e-8)

    def test_against_finite_volume_oracle(self):
        grid = GridSpec(20, 20)
        prior = build_matern_prior(MaternSpec(1.12, 0.12, grid))
        truth = prior.sample(np.random.default_rng(2021), 1)[0]
        p = DarcyProblem(grid, PermTransform("lognormal"), 2.0)
        fem = observe(p, solve_pressure(p, truth))
        fv = p.obs_operator @ fd_pressure_oracle(grid, np.exp(truth), 2.0)
        np.testing.assert_allclose(fem, fv, rtol=0.02)

    def test_degenerate_permeability(self):
        p = DarcyProblem(GridSpec(5, 5), PermTransform("lognormal"), 1.0)
        with pytest.raises(DarcySolveError, match="min kappa"):
            solve_pressure(p, np.full(25, -800.0))

    def test_wrong_length(self):
        p = DarcyProblem(GridSpec(5, 5), PermTransform("lognormal"), 1.0)
        with pytest.raises(ValueError):
            solve_pressure(p, np.zeros(24))


class TestObservation:
    def test_default_points(self):
        pts = default_obs_points()
        assert pts.shape == (25, 2)
        assert pts.min() == pytest.approx(0.1) and pts.max() == pytest.approx(0.9)

    def test_constant_field(self):
        op = bilinear_operator(GridSpec(7, 6), default_obs_points())
        np.testing.assert_allclose(op @ np.full(42, 3.5), 3.5)

    def test_linear_field_at_mid_height(self):
        g = GridSpec(8, 8)
        op = bilinear_operator(g, [[0.3, 0.5], [0.77, 0.5]])
        np.testing.assert_allclose(op @ (0.7 * g.coords[:, 1]), 0.35)

    def test_node_value(self, rng):
        g = GridSpec(6, 6)
        u = rng.standard_normal(36)
        op = bilinear_operator(g, [g.coords[14], g.coords[35]])
        np.testing.assert_allclose(op @ u, u[[14, 35]], atol=1e-14)

    def test_outside_domain(self):
        with pytest.raises(ValueError, match="outside"):
            bilinear_operator(GridSpec(5, 5), [[0.5, 1.2]])


class TestAdjoint:
    def test_gradient_matches_fd(self, darcy10):
        rng = np.random.default_rng(5)
        truth = 0.5 * rng.standard_normal(100)
        obs = synthetic_observations(darcy10, truth, rng)
        m = 0.5 * rng.standard_normal(100)
        grad = misfit_gradient_adjoint(darcy10, m, obs)
        idx = rng.choice(100, 20, replace=False)
        for i in idx:
            f = lambda t: misfit(darcy10, obs, np.where(np.arange(100) == i, t[0], m))
            fd = fd_gradient(f, m[[i]], rel_step=1e-5)[0]
            assert abs(fd - grad[i]) <= 1e-4 * abs(grad[i]) + 1e-6 * np.abs(grad).max()

    def test_zero_residual_gives_zero_gradient(self, darcy10, rng):
        truth = rng.standard_normal(100) * 0.5
        clean = observe(darcy10, solve_pressure(darcy10, truth))
        obs = ObservationSpec.iid(clean, 0.01)
        assert np.linalg.norm(misfit_gradient_adjoint(darcy10, truth, obs)) < 1e-10

    def test_lognormal_chain_rule_at_zero(self):
        g = GridSpec(8, 8)
        p = DarcyProblem(g, PermTransform("lognormal"), 1.0)
        obs = ObservationSpec.iid(np.linspace(0.2, 0.8, 25), 0.01)
        # at m = 0 the chain-rule factor dkappa/dm equals kappa = 1
        assert np.all(p.transform.derivative(np.zeros(64)) == 1.0)
        grad = misfit_gradient_adjoint(p, np.zeros(64), obs)
        jac = jacobian_rows_adjoint(p, np.zeros(64))
        r = observe(p, solve_pressure(p, np.zeros(64))) - obs.d_obs
        np.testing.assert_allclose(grad, jac.T @ obs.inv_apply(r), rtol=1e-10, atol=1e-12)

    def test_gradient_equals_linearized_form(self, darcy10, rng):
        m = rng.standard_normal(100) * 0.7
        obs = synthetic_observations(darcy10, rng.standard_normal(100), rng)
        gm, jac = darcy10.linearize(m)
        expected = jac.T @ obs.inv_apply(gm - obs.d_obs)
        np.testing.assert_allclose(misfit_gradient_adjoint(darcy10, m, obs), expected, rtol=1e-10, atol=1e-12 * np.abs(expected).max())

    def test_jacobian_directional(self, darcy10, rng):
        m = rng.standard_normal(100) * 0.5
        jac = jacobian_rows_adjoint(darcy10, m)
        assert jac.shape == (25, 100)
        for _ in range(3):
            v = rng.standard_normal(100)
            fd = fd_directional(lambda x: observe(darcy10, solve_pressure(darcy10, x)), m, v, rel_step=1e-5)
            np.testing.assert_allclose(jac @ v, fd, rtol=1e-4, atol=1e-6 * np.abs(fd).max())

    def test_top_row_has_little_influence(self, grid10):
        # the inflow edge lies above every observation point
        p = DarcyProblem(grid10, PermTransform("lognormal"), 2.0)
        jac = jacobian_rows_adjoint(p, np.zeros(100))
        col = np.abs(jac).sum(axis=0)
        assert col[grid10.edge_nodes("top")].max() < 0.1 * col.max()

    def test_model_wrapper(self, darcy10, rng):
        model = DarcyModel(darcy10)
        assert model.dim_m == 100 and model.dim_d == 25
        m = rng.standard_normal(100) * 0.3
        gm, jac = model.linearize(m)
        np.testing.assert_allclose(gm, model.evaluate(m))
        np.testing.assert_allclose(jac, model.jacobian(m))


class TestSyntheticData:
    def test_misfit_at_truth_is_chi_square(self, grid10):
        p = DarcyProblem(grid10, PermTransform("lognormal"), 2.0)
        truth = np.random.default_rng(0).standard_normal(100) * 0.5
        rng = np.random.default_rng(1)
        sq = []
        for _ in range(50):
            obs = synthetic_observations(p, truth, rng)
            sq.append(np.sum((observe(p, solve_pressure(p, truth)) - obs.d_obs) ** 2))
        n_d, s2 = 25, 0.01**2
        # mean of 50 scaled chi-square(25) variables: sd = s2 sqrt(2 n_d / 50)
        assert abs(np.mean(sq) - n_d * s2) < 3 * s2 * np.sqrt(2 * n_d / 50)

    def test_bundle_round_trip(self, tmp_path, grid10, rng):
        p = DarcyProblem(grid10, PermTransform("monotonic_tanh"), 0.7)
        truth = rng.standard_normal(100)
        obs = synthetic_observations(p, truth, rng)
        save_bundle(tmp_path / "b.json", p, truth, obs)
        p2, truth2, obs2 = load_bundle(tmp_path / "b.json")
        np.testing.assert_array_equal(truth2, truth)
        np.testing.assert_array_equal(obs2.d_obs, obs.d_obs)
        np.testing.assert_allclose(observe(p2, solve_pressure(p2, truth)), observe(p, solve_pressure(p, truth)))

    def test_field_csv(self, tmp_path, grid10):
        write_field_csv(tmp_path / "f.csv", grid10, np.arange(100.0))
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "x,y,value" and len(lines) == 101
