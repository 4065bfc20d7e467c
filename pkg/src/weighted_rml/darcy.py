"""Steady Darcy pressure on the unit square with P1 finite elements.

Solves ``-div(kappa grad u) = 0`` with ``u = 0`` on the bottom edge, inflow
flux ``v`` on the top edge and no-flow side edges.  The permeability is a
pointwise transform of a latent Gaussian field given at the grid nodes and is
averaged over the three vertices of each triangle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .forward import ForwardModel, ObservationSpec
from .mesh import GridSpec, local_stiffness


class DarcySolveError(RuntimeError):
    pass


def _sech2(x):
    return 1.0 - np.tanh(x) ** 2


@dataclass(frozen=True)
class PermTransform:
    """Latent value to permeability map ``kappa = exp(h(m))``."""

    kind: str

    KINDS = ("lognormal", "monotonic_tanh", "nonmonotonic_tanh")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown permeability transform {self.kind!r}")

    def log_kappa(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "lognormal":
            return m
        if self.kind == "monotonic_tanh":
            return np.tanh(4 * m + 2) + np.tanh(4 * m - 2)
        return 2 * np.tanh(4 * m + 2) + np.tanh(2 - 4 * m) - 1

    def log_kappa_derivative(self, m):
        m = np.asarray(m, dtype=float)
        if self.kind == "lognormal":
            return np.ones_like(m)
        if self.kind == "monotonic_tanh":
            return 4 * _sech2(4 * m + 2) + 4 * _sech2(4 * m - 2)
        return 8 * _sech2(4 * m + 2) - 4 * _sech2(2 - 4 * m)

    def forward(self, m):
        return np.exp(self.log_kappa(m))

    def derivative(self, m):
        return self.forward(m) * self.log_kappa_derivative(m)


def default_obs_points(n: int = 5, lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """``n x n`` uniform observation grid on [lo, hi]^2, x varying fastest."""
    s = np.linspace(lo, hi, n)
    xx, yy = np.meshgrid(s, s)
    return np.column_stack([xx.ravel(), yy.ravel()])


def bilinear_operator(grid: GridSpec, points) -> sp.csr_matrix:
    """Sparse (n_points, n_nodes) bilinear interpolation matrix."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        bad = pts[np.any((pts < 0) | (pts > 1), axis=1)][0]
        raise ValueError(f"observation point {tuple(bad)} lies outside the unit square")
    fx, fy = pts[:, 0] / grid.hx, pts[:, 1] / grid.hy
    i = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
    j = np.clip(np.floor(fy).astype(int), 0, grid.ny - 2)
    s, t = fx - i, fy - j
    ll = j * grid.nx + i
    cols = np.column_stack([ll, ll + 1, ll + grid.nx, ll + grid.nx + 1])
    vals = np.column_stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t])
    rows = np.repeat(np.arange(len(pts)), 4)
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(len(pts), grid.n_nodes))


@dataclass(frozen=True)
class PressureField:
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class DarcyProblem:
    grid: GridSpec
    transform: PermTransform
    flux_v: float
    obs_points: np.ndarray = field(default_factory=default_obs_points)
    noise_sigma: float = 0.01

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.obs_points, dtype=float))
        object.__setattr__(self, "obs_points", pts)
        tri = self.grid.triangles
        dirichlet = self.grid.boundary_nodes("dirichlet")
        free = np.setdiff1d(np.arange(self.grid.n_nodes), dirichlet)
        load = np.zeros(self.grid.n_nodes)
        for edge, tag in self.grid.boundary_tags.items():
            if edge == "top" and tag == "neumann":
                nodes = self.grid.edge_nodes(edge)
                w = np.full(len(nodes), self.grid.hx)
                w[[0, -1]] *= 0.5
                load[nodes] += self.flux_v * w
        incidence = sp.csr_matrix(
            (np.full(tri.size, 1.0 / 3.0), (tri.ravel(), np.repeat(np.arange(len(tri)), 3))),
            shape=(self.grid.n_nodes, len(tri)),
        )
        # cached assembly data; all derived from the immutable fields above
        object.__setattr__(self, "_ke", local_stiffness(self.grid))
        object.__setattr__(self, "_free", free)
        object.__setattr__(self, "_load", load)
        object.__setattr__(self, "_obs_op", bilinear_operator(self.grid, pts))
        object.__setattr__(self, "_incidence", incidence)

    @property
    def n_obs(self) -> int:
        return len(self.obs_points)

    @property
    def obs_operator(self) -> sp.csr_matrix:
        return self._obs_op

    @property
    def load(self) -> np.ndarray:
        return self._load

    def element_kappa(self, m):
        kappa = self.transform.forward(m)
        return kappa[self.grid.triangles].mean(axis=1), kappa

    def system_matrix(self, m) -> sp.csr_matrix:
        """Full (unconstrained) stiffness matrix for latent field ``m``."""
        ke, kappa = self.element_kappa(m)
        if not np.all(np.isfinite(kappa)) or kappa.min() <= 1e-300:
            raise DarcySolveError(f"permeability degenerate, min kappa = {kappa.min():.3e}")
        tri = self.grid.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        n = self.grid.n_nodes
        vals = (self._ke * ke[:, None, None]).ravel()
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()

    def _factorize(self, m):
        m = np.asarray(m, dtype=float)
        if m.shape != (self.grid.n_nodes,):
            raise ValueError(f"latent field must have {self.grid.n_nodes} nodal values, got {m.shape}")
        k = self.system_matrix(m)
        free = self._free
        kff = k[free][:, free]
        try:
            lu = splu(kff.tocsc())
        except RuntimeError as exc:
            kappa = self.transform.forward(m)
            raise DarcySolveError(f"singular stiffness, min kappa = {kappa.min():.3e}") from exc
        return lu

    def _solve(self, m):
        lu = self._factorize(m)
        u = np.zeros(self.grid.n_nodes)
        u[self._free] = lu.solve(self._load[self._free])
        if not np.all(np.isfinite(u)):
            raise DarcySolveError("pressure solve produced non-finite values")
        return u, lu

    def solve_pressure(self, m) -> PressureField:
        u, _ = self._solve(m)
        return PressureField(u)

    def observe(self, u) -> np.ndarray:
        values = u.values if isinstance(u, PressureField) else np.asarray(u)
        return self._obs_op @ values

    def _element_sensitivity(self, m, u, adjoints):
        """Rows of d/dm_i of ``p^T K(m) u`` for each adjoint column ``p``."""
        tri = self.grid.triangles
        ku = np.einsum("eij,ej->ei", self._ke, u[tri])  # (n_tri, 3)
        s = np.einsum("eik,ei->ek", adjoints[tri], ku)  # (n_tri, n_adj)
        dk = self.transform.derivative(m)
        return (dk[:, None] * (self._incidence @ s)).T

    def _adjoint_solve(self, lu, rhs):
        """Solve K p = rhs on the free nodes; rhs has one column per adjoint."""
        p = np.zeros((self.grid.n_nodes, rhs.shape[1]))
        p[self._free] = lu.solve(np.ascontiguousarray(rhs[self._free]))
        return p

    def misfit_gradient_adjoint(self, m, obs: ObservationSpec, d=None) -> np.ndarray:
        """Gradient of 0.5 (g(m) - d)^T C_D^{-1} (g(m) - d) by one adjoint solve."""
        d = obs.d_obs if d is None else np.asarray(d)
        u, lu = self._solve(m)
        r = self._obs_op @ u - d
        rhs = self._obs_op.T @ obs.inv_apply(r)
        p = self._adjoint_solve(lu, rhs[:, None])
        return -self._element_sensitivity(m, u, p)[0]

    def linearize(self, m):
        """Predicted data and the N_d x N_m Jacobian (one adjoint solve per datum)."""
        u, lu = self._solve(m)
        rhs = self._obs_op.T.toarray()
        p = self._adjoint_solve(lu, rhs)
        return self._obs_op @ u, -self._element_sensitivity(m, u, p)

    def jacobian_rows_adjoint(self, m) -> np.ndarray:
        return self.linearize(m)[1]

    def residual_norm(self, m, u) -> float:
        """Discrete PDE residual on the free nodes."""
        values = u.values if isinstance(u, PressureField) else u
        k = self.system_matrix(m)
        r = k @ values - self._load
        return float(np.linalg.norm(r[self._free]))


class DarcyModel(ForwardModel):
    """Forward model wrapper: latent nodal field to observed pressures."""

    def __init__(self, problem: DarcyProblem):
        self.problem = problem
        self.dim_m = problem.grid.n_nodes
        self.dim_d = problem.n_obs

    def evaluate(self, m):
        return self.problem.observe(self.problem.solve_pressure(m))

    def jacobian(self, m):
        return self.problem.jacobian_rows_adjoint(m)

    def linearize(self, m):
        return self.problem.linearize(m)

    def misfit_gradient(self, m, obs, d=None):
        return self.problem.misfit_gradient_adjoint(m, obs, d)


def solve_pressure(problem: DarcyProblem, m) -> PressureField:
    return problem.solve_pressure(m)


def observe(problem: DarcyProblem, u: PressureField) -> np.ndarray:
    return problem.observe(u)


def misfit_gradient_adjoint(problem: DarcyProblem, m, obs: ObservationSpec) -> np.ndarray:
    return problem.misfit_gradient_adjoint(m, obs)


def jacobian_rows_adjoint(problem: DarcyProblem, m) -> np.ndarray:
    return problem.jacobian_rows_adjoint(m)


def synthetic_observations(problem: DarcyProblem, truth, rng: np.random.Generator) -> ObservationSpec:
    """Noisy pressures at the observation points for a given latent truth."""
    clean = problem.observe(problem.solve_pressure(truth))
    noisy = clean + problem.noise_sigma * rng.standard_normal(clean.shape)
    return ObservationSpec.iid(noisy, problem.noise_sigma)


def write_field_csv(path, grid: GridSpec, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for (x, y), v in zip(grid.coords, np.asarray(values)):
            w.writerow([f"{x:.6g}", f"{y:.6g}", repr(float(v))])


def save_bundle(path, problem: DarcyProblem, truth, obs: ObservationSpec) -> None:
    """Persist the synthetic experiment (truth field and data) as JSON."""
    bundle = {
        "grid": [problem.grid.nx, problem.grid.ny],
        "transform": problem.transform.kind,
        "flux_v": problem.flux_v,
        "noise_sigma": problem.noise_sigma,
        "obs_points": problem.obs_points.tolist(),
        "truth": np.asarray(truth).tolist(),
        "d_obs": obs.d_obs.tolist(),
    }
    Path(path).write_text(json.dumps(bundle, indent=1))


def load_bundle(path):
    """Inverse of :func:`save_bundle`; returns (problem, truth, obs)."""
    b = json.loads(Path(path).read_text())
    problem = DarcyProblem(
        GridSpec(*b["grid"]),
        PermTransform(b["transform"]),
        b["flux_v"],
        np.array(b["obs_points"]),
        b["noise_sigma"],
    )
    obs = ObservationSpec.iid(np.array(b["d_obs"]), b["noise_sigma"])
    return problem, np.array(b["truth"]), obs
