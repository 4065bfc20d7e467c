"""Brute-force reference computations used to validate the samplers.

Nothing here calls into the weighting or solver code; the functions only
need log densities, dense matrices or a latent field.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.sparse.linalg import spsolve


class BoxTooSmallError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridPosterior:
    x: np.ndarray
    density: np.ndarray
    cdf: np.ndarray

    def cdf_at(self, v) -> np.ndarray:
        return np.interp(v, self.x, self.cdf, left=0.0, right=1.0)

    def mean(self) -> float:
        return float(trapezoid(self.x * self.density, self.x))

    def modes(self) -> np.ndarray:
        d = self.density
        idx = np.where((d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:]))[0] + 1
        return self.x[idx]


def grid_posterior_1d(log_density, box, n: int = 4001, tail: float = 1e-12) -> GridPosterior:
    """Normalized density and CDF of ``exp(log_density)`` on a uniform grid."""
    x = np.linspace(box[0], box[1], n)
    lp = np.asarray(log_density(x), dtype=float)
    p = np.exp(lp - lp.max())
    if p[0] > tail or p[-1] > tail:
        raise BoxTooSmallError(f"density at box ends ({p[0]:.2e}, {p[-1]:.2e}) exceeds {tail:g} of the peak")
    p /= trapezoid(p, x)
    cdf = cumulative_trapezoid(p, x, initial=0.0)
    return GridPosterior(x, p, np.clip(cdf / cdf[-1], 0.0, 1.0))


def weighted_ks_distance(values, weights, reference: GridPosterior) -> float:
    """sup_x |F_w(x) - F_ref(x)| for the weighted empirical CDF ``F_w``.

    The reference CDF is piecewise linear, so the supremum is attained at the
    sample locations (from the left or the right).
    """
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    w = w / w.sum()
    uniq, first = np.unique(v, return_index=True)
    upper = np.cumsum(w)[np.r_[first[1:] - 1, v.size - 1]]
    lower = np.r_[0.0, upper[:-1]]
    f = reference.cdf_at(uniq)
    d = max(np.max(np.abs(upper - f)), np.max(np.abs(f - lower)))
    return float(min(max(d, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class GridPosterior2D:
    """Cell-centred density on a box; ``mass[i, j]`` is the cell probability."""

    x: np.ndarray
    y: np.ndarray
    mass: np.ndarray
    box: tuple


def grid_posterior_2d(log_density, box_x, box_y, n: int = 600, tail: float = 1e-10) -> GridPosterior2D:
    hx = (box_x[1] - box_x[0]) / n
    hy = (box_y[1] - box_y[0]) / n
    x = box_x[0] + hx * (np.arange(n) + 0.5)
    y = box_y[0] + hy * (np.arange(n) + 0.5)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    lp = log_density(xx, yy)
    p = np.exp(lp - lp.max())
    edge = max(p[0].max(), p[-1].max(), p[:, 0].max(), p[:, -1].max())
    if edge > tail:
        raise BoxTooSmallError(f"density on box boundary is {edge:.2e} of the peak")
    return GridPosterior2D(x, y, p / p.sum(), (tuple(box_x), tuple(box_y)))


def histogram_tv_distance(samples, weights, reference: GridPosterior2D, bins: int = 20) -> float:
    """Total variation between a weighted 2-D histogram and the reference mass.

    Both are binned on ``bins x bins`` cells over the reference box; sample
    mass outside the box counts fully towards the distance.
    """
    s = np.asarray(samples, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    (x0, x1), (y0, y1) = reference.box
    n = len(reference.x)
    if n % bins:
        raise ValueError(f"reference grid size {n} is not a multiple of {bins} bins")
    ref = reference.mass.reshape(bins, n // bins, bins, n // bins).sum(axis=(1, 3))
    hist, _, _ = np.histogram2d(s[:, 0], s[:, 1], bins=bins, range=[[x0, x1], [y0, y1]], weights=w)
    outside = 1.0 - hist.sum()
    return float(0.5 * (np.abs(hist - ref).sum() + max(outside, 0.0)))


def fd_gradient(func, m, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with per-component step ``rel_step * (1 + |m_i|)``."""
    m = np.asarray(m, dtype=float)
    grad = np.empty_like(m)
    for i in range(m.size):
        h = rel_step * (1.0 + abs(m[i]))
        h = (m[i] + h) - m[i]  # exactly representable step
        e = np.zeros_like(m)
        e[i] = h
        fp, fm = func(m + e), func(m - e)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise FloatingPointError(f"non-finite function value near component {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad


def fd_directional(func, m, direction, rel_step: float = 1e-6):
    """Central difference of a (vector) function along ``direction``."""
    m = np.asarray(m, dtype=float)
    h = rel_step * (1.0 + np.linalg.norm(m, np.inf))
    return (np.asarray(func(m + h * direction)) - np.asarray(func(m - h * direction))) / (2 * h)


def dense_det_oracle(matrix) -> tuple[float, float]:
    """``(sign, log|det|)`` from an LU factorization; ``(0, -inf)`` if singular."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if a.shape[0] > 2000:
        raise ValueError("dense determinant oracle limited to 2000 x 2000")
    with warnings.catch_warnings():
        # exact singularity is reported through the return value
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    diag = np.diag(lu)
    if np.any(diag == 0.0):
        return 0.0, -np.inf
    swaps = np.sum(piv != np.arange(len(piv)))
    sign = (-1.0) ** swaps * np.prod(np.sign(diag))
    return float(sign), float(np.sum(np.log(np.abs(diag))))


# ---------------------------------------------------------------------------
# closed-form targets


def quadratic_log_posterior(x, prior_mean=0.8, prior_var=1.0, d_obs=1.0, sigma_d=0.5):
    x = np.asarray(x, dtype=float)
    return -0.5 * (x - prior_mean) ** 2 / prior_var - 0.5 * (x**2 - d_obs) ** 2 / sigma_d**2


def banana_log_conditional(m1, m2, sigma_m=5.0, sigma_d=4.0, d_obs=4.0):
    """log pi(m1, m2 | m3 = m4 = 0) up to a constant."""
    return -0.5 * (m1**2 + m2**2) / sigma_m**2 - 0.5 * (d_obs - 10 * m1 - m2**2) ** 2 / sigma_d**2


def gaussian_linear_posterior(matrix, prior_mean, prior_cov, d_obs, noise_cov):
    """Conjugate posterior mean and covariance for ``d = G m + e``."""
    g = np.atleast_2d(matrix)
    pinv = np.linalg.inv(prior_cov)
    ninv = np.linalg.inv(noise_cov)
    cov = np.linalg.inv(pinv + g.T @ ninv @ g)
    mean = cov @ (pinv @ prior_mean + g.T @ ninv @ d_obs)
    return mean, 0.5 * (cov + cov.T)


def fd_pressure_oracle(grid, kappa_nodes, flux_v) -> np.ndarray:
    """Vertex-centred finite-volume pressure solve on the same node grid.

    Face transmissibilities use the arithmetic mean of the two node values;
    ``u = 0`` on the bottom edge, flux ``flux_v`` enters through the top edge.
    """
    nx, ny = grid.nx, grid.ny
    hx, hy = 1.0 / (nx - 1), 1.0 / (ny - 1)
    k = np.asarray(kappa_nodes, dtype=float).reshape(ny, nx)

    def idx(i, j):
        return j * nx + i

    rows, cols, vals = [], [], []
    rhs = np.zeros(nx * ny)
    for j in range(ny):
        for i in range(nx):
            p = idx(i, j)
            if j == 0:
                rows.append(p), cols.append(p), vals.append(1.0)
                continue
            # dual-cell extents: halved on the domain boundary
            wx = hx * (0.5 if i in (0, nx - 1) else 1.0)
            wy = hy * (0.5 if j == ny - 1 else 1.0)
            diag = 0.0
            for di, dj, length, h in ((1, 0, wy, hx), (-1, 0, wy, hx), (0, 1, wx, hy), (0, -1, wx, hy)):
                a, b = i + di, j + dj
                if not (0 <= a < nx and 0 <= b < ny):
                    continue
                t = 0.5 * (k[j, i] + k[b, a]) * length / h
                diag += t
                if b == 0:
                    continue  # Dirichlet neighbour, u = 0
                rows.append(p), cols.append(idx(a, b)), vals.append(-t)
            rows.append(p), cols.append(p), vals.append(diag)
            if j == ny - 1:
                rhs[p] = flux_v * wx
    a = sp.csr_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny))
    return spsolve(a.tocsc(), rhs)
