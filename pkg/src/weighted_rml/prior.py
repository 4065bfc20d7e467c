"""Gaussian priors with a factored precision matrix.

Every prior stores a square factor ``Q`` of its precision, ``Q @ Q.T = inv(C_M)``.
Sampling uses ``m = mean + solve(Q.T, xi)`` and whitening uses ``Q.T @ (m - mean)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .mesh import GridSpec, lumped_boundary_mass, lumped_mass, stiffness_matrix

logger = logging.getLogger(__name__)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix that should be SPD fails Cholesky factorization."""

    def __init__(self, what: str, pivot: int):
        self.pivot = pivot
        super().__init__(f"{what} is not positive definite: Cholesky failed at pivot {pivot}")


def cholesky_lower(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, reporting the zero-based failing pivot on error."""
    a = np.asarray(a, dtype=float)
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(what, info - 1)
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to dpotrf")
    return c


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """N(mean, C_M) with the precision held as ``Q @ Q.T``.

    ``inv_factor`` is triangular; ``lower`` records which triangle.
    """

    mean: np.ndarray
    inv_factor: np.ndarray
    lower: bool

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def precision_apply(self, v: np.ndarray) -> np.ndarray:
        """inv(C_M) @ v through the factor."""
        return self.inv_factor @ (self.inv_factor.T @ v)

    def cov_apply(self, v: np.ndarray) -> np.ndarray:
        """C_M @ v = Q^{-T} Q^{-1} v."""
        return self.solve_factor_t(self.solve_factor(v))

    def solve_factor(self, v: np.ndarray) -> np.ndarray:
        """Q^{-1} v."""
        return sla.solve_triangular(self.inv_factor, v, lower=self.lower)

    def solve_factor_t(self, v: np.ndarray) -> np.ndarray:
        """Q^{-T} v."""
        return sla.solve_triangular(self.inv_factor, v, lower=self.lower, trans="T")

    def whiten(self, m: np.ndarray) -> np.ndarray:
        """Q^T (m - mean); standard normal when m is a prior draw."""
        return self.inv_factor.T @ (np.asarray(m) - self.mean)

    def quad_form(self, m: np.ndarray, center: np.ndarray | None = None) -> float:
        """(m - c)^T inv(C_M) (m - c), with ``c`` defaulting to the mean."""
        c = self.mean if center is None else center
        w = self.inv_factor.T @ (np.asarray(m) - c)
        return float(w @ w)

    def covariance(self) -> np.ndarray:
        """Dense C_M (for oracles and small problems)."""
        return self.cov_apply(np.eye(self.dim))

    def precision(self) -> np.ndarray:
        return self.inv_factor @ self.inv_factor.T

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` independent draws as rows of an (n, dim) array."""
        if n < 1:
            raise ValueError(f"need n >= 1 samples, got {n}")
        xi = rng.standard_normal((self.dim, n))
        return (self.mean[:, None] + self.solve_factor_t(xi)).T


def build_dense_prior(mean, cov) -> GaussianPrior:
    """Prior from an explicit covariance matrix.

    With ``cov = L L^T`` the precision factor is ``Q = L^{-T}`` (upper triangular).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
    scale = max(np.abs(cov).max(), np.finfo(float).tiny)
    if np.abs(cov - cov.T).max() > 1e-12 * scale:
        raise ValueError("covariance is not symmetric")
    chol = cholesky_lower(cov, "covariance")
    q = sla.solve_triangular(chol, np.eye(mean.size), lower=True).T
    return GaussianPrior(mean=mean, inv_factor=q, lower=False)


@dataclass(frozen=True)
class MaternSpec:
    """Whittle-Matern field with covariance (-gamma Laplacian + alpha)^{-2}.

    ``boundary`` selects the boundary term of the elliptic operator:
    ``"robin"`` adds ``robin_coeff * u`` on the boundary (default coefficient
    sqrt(gamma * alpha) / 1.42) which damps the variance inflation of the
    natural condition, ``"neumann"`` uses the natural condition alone.
    """

    gamma: float
    alpha: float
    grid: GridSpec
    boundary: str = "robin"
    robin_coeff: float | None = None

    def __post_init__(self):
        if not (self.gamma > 0 and self.alpha > 0):
            raise ValueError(f"gamma and alpha must be positive, got {self.gamma}, {self.alpha}")
        if self.boundary not in ("robin", "neumann"):
            raise ValueError(f"unknown prior boundary condition {self.boundary!r}")

    @property
    def range(self) -> float:
        return float(np.sqrt(self.gamma / self.alpha))

    @property
    def pointwise_variance(self) -> float:
        """Free-space marginal variance 1 / (4 pi gamma alpha)."""
        return 1.0 / (4.0 * np.pi * self.gamma * self.alpha)

    def operator(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense elliptic operator A and lumped mass diagonal M."""
        grid = self.grid
        mass = lumped_mass(grid)
        a = self.gamma * stiffness_matrix(grid).toarray() + self.alpha * np.diag(mass)
        if self.boundary == "robin":
            beta = self.robin_coeff
            if beta is None:
                beta = np.sqrt(self.gamma * self.alpha) / 1.42
            a += beta * np.diag(lumped_boundary_mass(grid))
        return a, mass


def build_matern_prior(spec: MaternSpec, mean=None) -> GaussianPrior:
    """Matern prior on the grid nodes with precision ``A M^{-1} A``."""
    n = spec.grid.n_nodes
    if n < 9:
        raise ValueError(f"degenerate grid with {n} nodes")
    a, mass = spec.operator()
    precision = a @ (a / mass[:, None])
    precision = 0.5 * (precision + precision.T)
    q = cholesky_lower(precision, "Matern precision")
    mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
    if mean.shape != (n,):
        raise ValueError(f"mean must have length {n}")
    logger.debug("Matern prior on %dx%d grid, range %.3g", spec.grid.nx, spec.grid.ny, spec.range)
    return GaussianPrior(mean=mean, inv_factor=q, lower=True)


def sample_prior(prior: GaussianPrior, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """``n`` prior draws as a list of vectors."""
    return list(prior.sample(rng, n))
