"""Critical points of the stochastic cost: enumeration and descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize

from .forward import QuadraticModel
from .perturb import StochasticObjective

logger = logging.getLogger(__name__)

KINDS = ("minimizer", "maximizer", "saddle", "unclassified")


class DivergenceError(FloatingPointError):
    """Non-finite objective or gradient during minimization."""

    def __init__(self, message: str, iterate: np.ndarray):
        self.iterate = np.array(iterate, copy=True)
        with np.printoptions(threshold=20, precision=4):
            super().__init__(f"{message}; iterate = {self.iterate}")


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    m: np.ndarray
    delta: np.ndarray
    kind: str = "unclassified"
    grad_norm: float = float("nan")
    iters: int = 0
    converged: bool = True
    source_draw: int = -1
    objective: float = float("nan")
    history: tuple = ()


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`minimize`.

    ``grad_tol`` is relative: a point is converged once
    ``|grad L(m)| <= grad_tol * (1 + |grad L(m')|)``.
    ``hessian`` is ``"newton"`` (exact, needs second derivatives),
    ``"gauss_newton"`` or ``"auto"``.  ``cg_tol_schedule`` is
    ``"eisenstat_walker"`` (forcing term ``min(0.5, sqrt(|g| / |g0|))``)
    or a float giving a fixed relative CG tolerance.
    """

    max_iters: int = 300
    grad_tol: float = 1e-8
    init_strategy: str = "at_m_prime"
    linesearch: str = "armijo"
    cg_tol_schedule: str | float = "eisenstat_walker"
    hessian: str = "auto"
    armijo_c1: float = 1e-4
    max_backtracks: int = 40
    fallback: str | None = "bfgs"

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.init_strategy not in ("at_m_prime", "random_prior_draw", "supplied"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")
        if self.linesearch != "armijo":
            raise ValueError(f"unsupported line search {self.linesearch!r}")
        if self.hessian not in ("auto", "newton", "gauss_newton"):
            raise ValueError(f"unknown hessian mode {self.hessian!r}")
        if self.fallback not in (None, "bfgs"):
            raise ValueError(f"unknown fallback {self.fallback!r}")


# ---------------------------------------------------------------------------
# closed-form enumeration for g(m) = m^2


def cubic_coefficients(obj: StochasticObjective) -> np.ndarray:
    """Coefficients of C_M * dL/dm for the scalar quadratic model.

    ``dL/dm = (m - m')/c + (2 m / s2) (m^2 - delta)`` with prior variance ``c``
    and noise variance ``s2``; multiplying by ``c`` gives
    ``(2c/s2) m^3 + (1 - 2c delta/s2) m - m'``.
    """
    c = float(obj.prior.covariance()[0, 0])
    s2 = float(obj.obs.noise_cov[0, 0])
    delta = float(obj.pair.delta_prime[0])
    mp = float(obj.pair.m_prime[0])
    return np.array([2.0 * c / s2, 0.0, 1.0 - 2.0 * c * delta / s2, -mp])


def real_cubic_roots(coeffs, sep: float = 1e-8, imag_tol: float = 1e-6) -> np.ndarray:
    """Distinct real roots via companion eigenvalues plus Newton polishing."""
    coeffs = np.asarray(coeffs, dtype=float)
    dp = np.polyder(coeffs)
    roots = np.roots(coeffs)
    cand = np.sort(roots[np.abs(roots.imag) <= imag_tol * np.maximum(1.0, np.abs(roots))].real)
    if cand.size == 0:  # a real cubic always has a real root; guard round-off
        cand = np.array([roots[np.argmin(np.abs(roots.imag))].real])
    polished = []
    for x in cand:
        for _ in range(8):
            d = np.polyval(dp, x)
            if d == 0.0:
                break
            step = np.polyval(coeffs, x) / d
            x -= step
            if abs(step) <= 1e-16 * max(1.0, abs(x)):
                break
        polished.append(x)
    out = []
    for x in sorted(polished):
        if not out or abs(x - out[-1]) > sep:
            out.append(x)
    return np.array(out)


def all_critical_points_cubic(obj: StochasticObjective) -> list[CriticalPoint]:
    """Every real critical point of L_i for the scalar ``g(m) = m^2`` model."""
    if not isinstance(obj.model, QuadraticModel):
        raise TypeError("closed-form enumeration needs the scalar quadratic model")
    roots = real_cubic_roots(cubic_coefficients(obj))
    points = []
    for x in roots:
        m = np.array([x])
        g = obj.gradient(m)
        p = CriticalPoint(
            m=m,
            delta=obj.pair.delta_prime,
            grad_norm=float(np.linalg.norm(g)),
            iters=0,
            converged=True,
            source_draw=obj.pair.draw_index,
            objective=obj.value(m),
        )
        points.append(classify(obj, p))
    return points


# ---------------------------------------------------------------------------
# classification


def hessian_kind(h: np.ndarray, rel_tol: float = 1e-8) -> str:
    eig = np.linalg.eigvalsh(h)
    scale = max(np.abs(eig).max(), np.finfo(float).tiny)
    if np.any(np.abs(eig) < rel_tol * scale):
        return "unclassified"
    if np.all(eig > 0):
        return "minimizer"
    if np.all(eig < 0):
        return "maximizer"
    return "saddle"


def classify(obj: StochasticObjective, point: CriticalPoint) -> CriticalPoint:
    """Set ``kind`` from the Hessian eigenvalue signs.

    Without second derivatives the Gauss-Newton Hessian is SPD, so converged
    points are reported as minimizers.
    """
    if not point.converged:
        return point
    if obj.model.has_second_derivative:
        kind = hessian_kind(obj.hessian(point.m))
    else:
        kind = "minimizer"
    return replace(point, kind=kind)


# ---------------------------------------------------------------------------
# descent


def _pcg(apply_h, precond, b, tol, max_iter):
    """Preconditioned CG for H p = b; stops early on negative curvature.

    Returns ``(p, hit_negative_curvature)``.
    """
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    d = z.copy()
    rz = r @ z
    target = tol * np.sqrt(max(rz, 0.0))
    for _ in range(max_iter):
        if np.sqrt(max(rz, 0.0)) <= target:
            break
        hd = apply_h(d)
        curv = d @ hd
        if curv <= 0.0:
            return x, True
        a = rz / curv
        x = x + a * d
        r = r - a * hd
        z = precond(r)
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, False


def _use_newton(obj, config):
    if config.hessian == "newton":
        if not obj.model.has_second_derivative:
            raise ValueError("newton mode needs a model with second derivatives")
        return True
    return config.hessian == "auto" and obj.model.has_second_derivative


def _check_finite(value, grad, m, what):
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite {what} during minimization", m)


def minimize(obj: StochasticObjective, config: SolverConfig, init) -> CriticalPoint:
    """Newton-CG / Gauss-Newton-CG descent on L_i with Armijo backtracking."""
    prior, obs, model = obj.prior, obj.obs, obj.model
    newton = _use_newton(obj, config)
    g_ref = np.linalg.norm(obj.gradient(obj.pair.m_prime))
    tol = config.grad_tol * (1.0 + g_ref)

    m = np.array(init, dtype=float)
    if not np.all(np.isfinite(m)):
        raise DivergenceError("non-finite initial point", m)
    gm, jac = model.linearize(m)
    f = obj.value(m, gm)
    g = obj.gradient_from(m, gm, jac)
    _check_finite(f, g, m, "objective")
    g0 = max(np.linalg.norm(g), np.finfo(float).tiny)
    history = [f]
    converged = False
    it = 0
    for it in range(config.max_iters + 1):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            converged = True
            break
        if it == config.max_iters:
            break
        w = obs.inv_apply(jac)
        if newton:
            curv = model.contracted_hessian(m, obs.inv_apply(gm - obj.pair.delta_prime))

            def apply_h(v, jac=jac, w=w, curv=curv):
                return prior.precision_apply(v) + w.T @ (jac @ v) + curv @ v
        else:

            def apply_h(v, jac=jac, w=w):
                return prior.precision_apply(v) + w.T @ (jac @ v)

        if config.cg_tol_schedule == "eisenstat_walker":
            cg_tol = min(0.5, np.sqrt(gnorm / g0))
        else:
            cg_tol = float(config.cg_tol_schedule)
        p, neg = _pcg(apply_h, prior.cov_apply, -g, cg_tol, max_iter=max(2 * m.size, 10))
        slope = g @ p
        if neg and (not np.any(p) or slope >= 0):
            p = -prior.cov_apply(g)
            slope = g @ p
        if not slope < 0:
            p = -prior.cov_apply(g)
            slope = g @ p

        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            trial = m + step * p
            try:
                gm_t = model.evaluate(trial)
                f_t = obj.value(trial, gm_t)
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError):
                f_t = np.inf
            if np.isfinite(f_t) and f_t <= f + config.armijo_c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            logger.debug("draw %d: line search failed at iteration %d", obj.pair.draw_index, it)
            break
        m = trial
        gm, jac = model.linearize(m)
        f = obj.value(m, gm)
        g = obj.gradient_from(m, gm, jac)
        _check_finite(f, g, m, "objective or gradient")
        history.append(f)

    point = CriticalPoint(
        m=m,
        delta=obj.pair.delta_prime,
        kind="minimizer" if converged else "unclassified",
        grad_norm=float(np.linalg.norm(g)),
        iters=it,
        converged=converged,
        source_draw=obj.pair.draw_index,
        objective=float(f),
        history=tuple(history),
    )
    if not converged and config.fallback == "bfgs":
        point = _bfgs_fallback(obj, config, point, tol)
    return point


def _bfgs_fallback(obj, config, point, tol):
    res = scipy.optimize.minimize(
        obj.value,
        point.m,
        jac=obj.gradient,
        method="BFGS",
        options={"gtol": tol, "maxiter": config.max_iters, "norm": 2},
    )
    if not np.isfinite(res.fun) or res.fun > point.objective:
        return point
    g = obj.gradient(res.x)
    gnorm = float(np.linalg.norm(g))
    converged = gnorm <= tol
    return replace(
        point,
        m=res.x,
        grad_norm=gnorm,
        iters=point.iters + int(res.nit),
        converged=converged,
        kind="minimizer" if converged else "unclassified",
        objective=float(res.fun),
        history=point.history + (float(res.fun),),
    )
