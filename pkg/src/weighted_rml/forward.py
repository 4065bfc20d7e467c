"""Forward-model interface, observation model and closed-form test problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .prior import cholesky_lower


@dataclass(frozen=True, eq=False)
class ObservationSpec:
    """Observed data ``d_obs`` with additive Gaussian noise N(0, noise_cov)."""

    d_obs: np.ndarray
    noise_cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d_obs, dtype=float))
        c = np.asarray(self.noise_cov, dtype=float)
        if c.ndim <= 1:
            c = np.diag(np.broadcast_to(c, d.shape).astype(float))
        if c.shape != (d.size, d.size):
            raise ValueError(f"noise covariance shape {c.shape} does not match {d.size} data")
        object.__setattr__(self, "d_obs", d)
        object.__setattr__(self, "noise_cov", c)
        object.__setattr__(self, "_chol", cholesky_lower(c, "noise covariance"))

    @classmethod
    def iid(cls, d_obs, sigma: float) -> "ObservationSpec":
        d = np.atleast_1d(np.asarray(d_obs, dtype=float))
        return cls(d, np.full(d.size, float(sigma) ** 2))

    @property
    def dim(self) -> int:
        return self.d_obs.size

    def inflated(self, factor: float) -> "ObservationSpec":
        """Same data with the noise covariance multiplied by ``factor``."""
        return ObservationSpec(self.d_obs, factor * self.noise_cov)

    def with_data(self, d) -> "ObservationSpec":
        return ObservationSpec(np.asarray(d, dtype=float), self.noise_cov)

    def inv_apply(self, r: np.ndarray) -> np.ndarray:
        """C_D^{-1} r (vector or matrix with N_d rows)."""
        return sla.cho_solve((self._chol, True), r)

    def whiten(self, r: np.ndarray) -> np.ndarray:
        """C_D^{-1/2} r using the Cholesky factor."""
        return sla.solve_triangular(self._chol, r, lower=True)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws from N(d_obs, C_D) as rows."""
        xi = rng.standard_normal((self.dim, n))
        return (self.d_obs[:, None] + self._chol @ xi).T


class ForwardModel:
    """Map ``g`` from N_m parameters to N_d predicted data.

    Subclasses implement :meth:`evaluate` and :meth:`jacobian`; closed-form
    models also implement :meth:`second_derivative_action`.
    """

    dim_m: int
    dim_d: int
    has_second_derivative = False

    def evaluate(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(g(m), G(m))``; PDE models override this to share one solve."""
        return self.evaluate(m), self.jacobian(m)

    def second_derivative_action(self, m: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Vector of ``u^T D^2 g_k(m) v`` over output components ``k``."""
        raise NotImplementedError(f"{type(self).__name__} has no second derivatives")

    def contracted_hessian(self, m: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Dense ``sum_k w_k D^2 g_k(m)`` built from second-derivative actions."""
        n = self.dim_m
        eye = np.eye(n)
        h = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                h[i, j] = h[j, i] = w @ self.second_derivative_action(m, eye[i], eye[j])
        return h

    def misfit_gradient(self, m: np.ndarray, obs: ObservationSpec, d=None) -> np.ndarray:
        """Gradient of 0.5 (g(m) - d)^T C_D^{-1} (g(m) - d); ``d`` defaults to the data."""
        d = obs.d_obs if d is None else d
        r = self.evaluate(m) - d
        return self.jacobian(m).T @ obs.inv_apply(r)


class LinearModel(ForwardModel):
    has_second_derivative = True

    def __init__(self, matrix):
        g = np.atleast_2d(np.asarray(matrix, dtype=float))
        if not np.all(np.isfinite(g)):
            raise ValueError("linear operator has non-finite entries")
        self.matrix = g
        self.dim_d, self.dim_m = g.shape

    def evaluate(self, m):
        return self.matrix @ m

    def jacobian(self, m):
        return self.matrix.copy()

    def second_derivative_action(self, m, u, v):
        return np.zeros(self.dim_d)

    def contracted_hessian(self, m, w):
        return np.zeros((self.dim_m, self.dim_m))


class QuadraticModel(ForwardModel):
    """Scalar ``g(m) = m^2``."""

    dim_m = 1
    dim_d = 1
    has_second_derivative = True

    def evaluate(self, m):
        m = np.asarray(m, dtype=float)
        return m**2

    def jacobian(self, m):
        return np.array([[2.0 * float(np.asarray(m).ravel()[0])]])

    def second_derivative_action(self, m, u, v):
        return np.array([2.0 * float(np.ravel(u)[0]) * float(np.ravel(v)[0])])


class BananaModel(ForwardModel):
    """Scalar ``g(m) = 10 m_1 + m_2^2`` on R^dim."""

    dim_d = 1
    has_second_derivative = True

    def __init__(self, dim: int = 4):
        if dim < 2:
            raise ValueError(f"banana model needs dim >= 2, got {dim}")
        self.dim_m = dim

    def evaluate(self, m):
        return np.array([10.0 * m[0] + m[1] ** 2])

    def jacobian(self, m):
        row = np.zeros((1, self.dim_m))
        row[0, 0] = 10.0
        row[0, 1] = 2.0 * m[1]
        return row

    def second_derivative_action(self, m, u, v):
        return np.array([2.0 * u[1] * v[1]])

    def contracted_hessian(self, m, w):
        h = np.zeros((self.dim_m, self.dim_m))
        h[1, 1] = 2.0 * float(np.sum(w))
        return h


def linear_model(matrix) -> LinearModel:
    return LinearModel(matrix)


def quadratic_model() -> QuadraticModel:
    return QuadraticModel()


def banana_model(dim: int = 4) -> BananaModel:
    return BananaModel(dim)
