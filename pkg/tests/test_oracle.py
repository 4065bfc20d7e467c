import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from weighted_rml.oracle import (
    BoxTooSmallError,
    banana_log_conditional,
    dense_det_oracle,
    fd_gradient,
    gaussian_linear_posterior,
    grid_posterior_1d,
    grid_posterior_2d,
    histogram_tv_distance,
    quadratic_log_posterior,
    weighted_ks_distance,
)


@pytest.fixture(scope="module")
def std_normal():
    return grid_posterior_1d(lambda x: -0.5 * x * x, (-8, 8), n=4001)


class TestGrid1D:
    def test_standard_normal(self, std_normal):
        assert std_normal.cdf_at(0.0) == pytest.approx(0.5, abs=1e-6)
        assert std_normal.cdf_at(1.0) == pytest.approx(ndtr(1.0), abs=1e-6)
        assert np.trapezoid(std_normal.density, std_normal.x) == pytest.approx(1.0, abs=1e-10)
        assert np.all(std_normal.density >= 0) and np.all(np.diff(std_normal.cdf) >= 0)

    def test_box_too_small(self):
        with pytest.raises(BoxTooSmallError):
            grid_posterior_1d(lambda x: -0.5 * x * x, (-3, 3))

    def test_quadratic_posterior_shape(self):
        ref = grid_posterior_1d(quadratic_log_posterior, (-4, 5))
        modes = ref.modes()
        assert len(modes) == 2
        np.testing.assert_allclose(modes, [-1, 1], atol=0.2)
        d = np.interp(modes, ref.x, ref.density)
        assert d[1] > d[0]
        # adaptive quadrature values of the same density
        assert ref.mean() == pytest.approx(0.52364899, abs=1e-6)
        assert ref.cdf_at(0.0) == pytest.approx(0.22003518, abs=1e-6)


class TestKS:
    def test_quantile_sample(self, std_normal):
        n = 10_000
        x = ndtri((np.arange(n) + 0.5) / n)
        assert weighted_ks_distance(x, np.full(n, 1 / n), std_normal) < 0.01

    def test_point_mass(self, std_normal):
        d = weighted_ks_distance([0.7], [1.0], std_normal)
        f = std_normal.cdf_at(0.7)
        assert d == pytest.approx(max(f, 1 - f), abs=1e-12)

    def test_weights_matter(self, std_normal):
        x = np.array([-1.0, 1.0])
        assert weighted_ks_distance(x, [0.9, 0.1], std_normal) > weighted_ks_distance(x, [0.5, 0.5], std_normal)

    def test_empty(self, std_normal):
        with pytest.raises(ValueError):
            weighted_ks_distance([], [], std_normal)


class TestGrid2D:
    def test_banana_reference(self):
        ref = grid_posterior_2d(banana_log_conditional, (-60, 5), (-25, 25), n=600, tail=1e-5)
        assert ref.mass.sum() == pytest.approx(1.0)
        # symmetric in m2
        np.testing.assert_allclose(ref.mass, ref.mass[:, ::-1], rtol=1e-8, atol=1e-15)

    def test_box_too_small(self):
        with pytest.raises(BoxTooSmallError):
            grid_posterior_2d(banana_log_conditional, (-25, 5), (-25, 25), n=100)

    def test_tv_of_exact_sample(self):
        ref = grid_posterior_2d(lambda x, y: -0.5 * (x * x + y * y), (-6, 6), (-6, 6), n=200, tail=1e-7)
        s = np.random.default_rng(0).standard_normal((50_000, 2))
        assert histogram_tv_distance(s, np.ones(len(s)), ref, bins=20) < 0.03
        assert histogram_tv_distance(s + 1.5, np.ones(len(s)), ref, bins=20) > 0.3

    def test_bins_must_divide(self):
        ref = grid_posterior_2d(lambda x, y: -0.5 * (x * x + y * y), (-6, 6), (-6, 6), n=100, tail=1e-7)
        with pytest.raises(ValueError):
            histogram_tv_distance(np.zeros((2, 2)), np.ones(2), ref, bins=30)


class TestFiniteDifferences:
    def test_linear_function(self, rng):
        a = rng.standard_normal(6)
        m = rng.standard_normal(6)
        fd = fd_gradient(lambda x: a @ x, m)
        assert np.linalg.norm(fd - a) < 1e-10 * np.linalg.norm(a)

    def test_half_norm(self, rng):
        m = rng.standard_normal(5)
        fd = fd_gradient(lambda x: 0.5 * x @ x, m)
        assert np.linalg.norm(fd - m) < 1e-9 * np.linalg.norm(m)

    def test_banana_gradient(self, rng):
        def grad(m):
            r = 4.0 - 10 * m[0] - m[1] ** 2
            return np.array([-m[0] / 25 + 10 * r / 16, -m[1] / 25 + 2 * m[1] * r / 16])

        for _ in range(5):
            m = rng.standard_normal(2) * 2
            fd = fd_gradient(lambda x: banana_log_conditional(x[0], x[1]), m)
            np.testing.assert_allclose(fd, grad(m), rtol=1e-5)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            fd_gradient(lambda x: np.log(x[0]), np.array([0.0]))


class TestDeterminant:
    def test_identity(self):
        assert dense_det_oracle(np.eye(4)) == (1.0, 0.0)

    def test_diagonal(self):
        lam = np.array([0.5, 2.0, 7.0])
        sign, ld = dense_det_oracle(np.diag(1 + lam))
        assert sign == 1.0 and ld == pytest.approx(np.log1p(lam).sum())

    def test_sign_and_singular(self):
        assert dense_det_oracle(np.array([[0.0, 1.0], [1.0, 0.0]]))[0] == -1.0
        assert dense_det_oracle(np.zeros((2, 2))) == (0.0, -np.inf)

    def test_not_square(self):
        with pytest.raises(ValueError):
            dense_det_oracle(np.zeros((2, 3)))


def test_gaussian_linear_posterior_scalar():
    mean, cov = gaussian_linear_posterior(np.array([[1.0]]), np.array([0.0]), np.eye(1), np.array([2.0]), np.eye(1))
    np.testing.assert_allclose(mean, [1.0])
    np.testing.assert_allclose(cov, [[0.5]])
