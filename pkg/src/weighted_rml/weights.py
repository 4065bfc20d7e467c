"""Importance weights for critical points of the stochastic cost.

For a critical point ``m`` of draw ``(m', delta')`` the unnormalized weight is

    w = n(m') |V|^{1/2} exp(-0.5 eta^T V^{-1} eta) / |J|

with ``V = C_D + G C_M G^T``, ``eta = G (m - mean) - (g(m) - d_obs)`` and
``J`` the determinant of the map from critical points to perturbed draws.
All arithmetic is done with logarithms.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .forward import ForwardModel, ObservationSpec
from .prior import GaussianPrior, cholesky_lower

logger = logging.getLogger(__name__)

METHODS = ("exact", "gauss_newton_dense", "gauss_newton_lowrank")
TINY_LOG_DET = np.log(1e-300)


@dataclass(frozen=True, eq=False)
class WeightComponents:
    eta: np.ndarray
    V: np.ndarray
    log_abs_det_J: float
    n_crit: int
    log_weight_unnorm: float
    method: str
    log_det_V: float = float("nan")
    eta_quad: float = float("nan")
    sign_J: float = 1.0

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.log_weight_unnorm))


@dataclass(frozen=True, eq=False)
class LowRankHessian:
    """Generalized eigenpairs of (H_misfit, C_M^{-1}).

    ``eigvecs`` are C_M^{-1}-orthonormal; ``truncated`` is set when fewer than
    the requested number of numerically nonzero eigenvalues were found.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    rank: int
    truncated: bool = False

    def log_det(self, r: int | None = None) -> float:
        """sum_{i<=r} log(1 + lambda_i)."""
        lam = self.eigvals if r is None else self.eigvals[:r]
        return float(np.sum(np.log1p(lam)))


def compute_eta_V(model: ForwardModel, prior: GaussianPrior, obs: ObservationSpec, m, linearization=None):
    """``(eta, V)`` at ``m``; pass ``linearization=(g(m), G)`` to reuse a solve."""
    m = np.asarray(m, dtype=float)
    gm, jac = model.linearize(m) if linearization is None else linearization
    eta = jac @ (m - prior.mean) - (gm - obs.d_obs)
    v = obs.noise_cov + jac @ prior.cov_apply(jac.T)
    return eta, 0.5 * (v + v.T)


def exact_log_det_J(model: ForwardModel, prior: GaussianPrior, obs: ObservationSpec, m, delta, linearization=None):
    """``(sign, log|J|)`` with J = det(I + D b(m, delta)) including curvature of g.

    ``b(m, delta) = C_M G^T C_D^{-1} (g(m) - delta)``.  Returns ``log|J| = -inf``
    when ``|J| < 1e-300`` (locally non-invertible map).
    """
    if not model.has_second_derivative:
        raise ValueError(f"{type(model).__name__} has no second derivatives; use a Gauss-Newton method")
    m = np.asarray(m, dtype=float)
    gm, jac = model.linearize(m) if linearization is None else linearization
    w = obs.inv_apply(np.asarray(gm) - np.asarray(delta))
    h = jac.T @ obs.inv_apply(jac) + model.contracted_hessian(m, w)
    a = np.eye(m.size) + prior.cov_apply(h)
    sign, logdet = np.linalg.slogdet(a)
    if sign == 0 or logdet < TINY_LOG_DET:
        warnings.warn(f"Jacobian determinant below 1e-300 at m = {m[:4]}; weight set to zero", RuntimeWarning, stacklevel=2)
        return 0.0, -np.inf
    return float(sign), float(logdet)


def gn_log_det_J_dense(model: ForwardModel, prior: GaussianPrior, obs: ObservationSpec, m, linearization=None) -> float:
    """log det(I + C_M G^T C_D^{-1} G) via the N_d x N_d form det(I + C_D^{-1/2} G C_M G^T C_D^{-1/2})."""
    m = np.asarray(m, dtype=float)
    jac = model.linearize(m)[1] if linearization is None else linearization[1]
    wj = obs.whiten(jac)  # C_D^{-1/2} G with the Cholesky square root
    s = np.eye(obs.dim) + wj @ prior.cov_apply(wj.T)
    c = cholesky_lower(0.5 * (s + s.T), "I + whitened data-space Hessian")
    return float(2.0 * np.sum(np.log(np.diag(c))))


def misfit_hessian_action(jac: np.ndarray, obs: ObservationSpec):
    """Gauss-Newton misfit Hessian v -> G^T C_D^{-1} G v (v may be a matrix)."""
    return lambda v: jac.T @ obs.inv_apply(jac @ v)


def lowrank_gep(hess_apply, prior: GaussianPrior, rank: int, oversample: int = 10, rng=None, power_iters: int = 1, rel_tol: float = 1e-12) -> LowRankHessian:
    """Top generalized eigenpairs of ``H_misfit u = lambda C_M^{-1} u``.

    Works on the prior-preconditioned operator ``Q^{-1} H Q^{-T}`` with a
    randomized range finder (``rank + oversample`` Gaussian probes and
    ``power_iters`` subspace iterations) followed by a small dense eigensolve.
    Probes are drawn as rows so larger probe sets extend smaller ones, which
    keeps the truncated determinant monotone in ``rank`` for a fixed seed.
    """
    n = prior.dim
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(rng)
    k = min(rank + oversample, n)

    def op(x):
        return prior.solve_factor(hess_apply(prior.solve_factor_t(x)))

    omega = rng.standard_normal((k, n)).T
    y = op(omega)
    for _ in range(power_iters):
        basis, _ = np.linalg.qr(y)
        y = op(basis)
    basis, _ = np.linalg.qr(y)
    t = basis.T @ op(basis)
    lam, s = np.linalg.eigh(0.5 * (t + t.T))
    order = np.argsort(lam)[::-1]
    lam, s = lam[order], s[:, order]
    scale = max(lam[0], 1.0) if lam.size else 1.0
    keep = min(rank, int(np.sum(lam > rel_tol * scale)))
    u_hat = basis @ s[:, :keep]
    vecs = prior.solve_factor_t(u_hat)
    return LowRankHessian(eigvals=np.maximum(lam[:keep], 0.0), eigvecs=vecs, rank=keep, truncated=keep < rank)


def assemble_weight(eta, V, log_abs_det_J: float, n_crit: int, method: str, lowrank: LowRankHessian | None = None, sign_J: float = 1.0) -> WeightComponents:
    """Log of the unnormalized weight.

    Dense methods use ``log n + 0.5 log|V| - 0.5 eta^T V^{-1} eta - log|J|``.
    The low-rank method folds ``|V|^{1/2} / J`` into ``-0.5 sum log(1 + lambda_i)``
    (the common factor sigma^{N_d} is dropped).
    """
    if method not in METHODS:
        raise ValueError(f"unknown weight method {method!r}")
    chol = cholesky_lower(V, "V = C_D + G C_M G^T")
    z = sla.solve_triangular(chol, eta, lower=True)
    quad = float(z @ z)
    log_det_v = float(2.0 * np.sum(np.log(np.diag(chol))))
    log_n = np.log(n_crit)
    if method == "gauss_newton_lowrank":
        if lowrank is None:
            raise ValueError("low-rank weights need a LowRankHessian")
        log_abs_det_J = lowrank.log_det()
        logw = log_n - 0.5 * quad - 0.5 * log_abs_det_J
    else:
        logw = log_n + 0.5 * log_det_v - 0.5 * quad - log_abs_det_J
    if not np.isfinite(logw):
        logw = -np.inf
    return WeightComponents(
        eta=np.asarray(eta),
        V=V,
        log_abs_det_J=log_abs_det_J,
        n_crit=n_crit,
        log_weight_unnorm=float(logw),
        method=method,
        log_det_V=log_det_v,
        eta_quad=quad,
        sign_J=sign_J,
    )


def point_weight(model, prior, obs, m, delta, method: str, n_crit: int = 1, rank: int | None = None, oversample: int = 10, rng=None, cd_inflation: float = 1.0) -> WeightComponents:
    """Weight components for one critical point with the chosen method."""
    if cd_inflation != 1.0:
        obs = obs.inflated(cd_inflation)
    lin = model.linearize(np.asarray(m, dtype=float))
    eta, v = compute_eta_V(model, prior, obs, m, lin)
    sign, lowrank = 1.0, None
    if method == "exact":
        sign, logj = exact_log_det_J(model, prior, obs, m, delta, lin)
    elif method == "gauss_newton_dense":
        logj = gn_log_det_J_dense(model, prior, obs, m, lin)
    elif method == "gauss_newton_lowrank":
        r = min(obs.dim, prior.dim) if rank is None else rank
        lowrank = lowrank_gep(misfit_hessian_action(lin[1], obs), prior, r, oversample, rng)
        logj = lowrank.log_det()
    else:
        raise ValueError(f"unknown weight method {method!r}")
    return assemble_weight(eta, v, logj, n_crit, method, lowrank, sign)


def normalize_and_ess(log_weights) -> tuple[np.ndarray, float]:
    """Normalized weights (log-sum-exp stabilized) and Kong's ESS 1 / sum w^2.

    Non-finite log weights get zero weight.
    """
    lw = np.asarray([c.log_weight_unnorm if isinstance(c, WeightComponents) else c for c in log_weights], dtype=float)
    if lw.size == 0:
        raise ValueError("empty ensemble: no weights to normalize")
    finite = np.isfinite(lw)
    if not finite.any():
        raise ValueError("empty ensemble: every log weight is non-finite")
    w = np.zeros_like(lw)
    w[finite] = np.exp(lw[finite] - logsumexp(lw[finite]))
    w /= w.sum()
    ess = 1.0 / float(np.sum(w**2))
    return w, ess
