"""Randomized prior/data perturbations and the per-draw stochastic cost.

Each draw ``i`` gets its own generator seeded by ``(seed, i, stream)`` so
that ensembles are reproducible regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import ForwardModel, ObservationSpec
from .prior import GaussianPrior

PAIR_STREAM = 0
INIT_STREAM = 1
PROBE_STREAM = 2
LAPLACE_STREAM = 3


def draw_rng(seed: int, index: int, stream: int = PAIR_STREAM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


@dataclass(frozen=True, eq=False)
class PerturbedPair:
    m_prime: np.ndarray
    delta_prime: np.ndarray
    draw_index: int


def draw_pair(prior: GaussianPrior, obs: ObservationSpec, seed: int, index: int) -> PerturbedPair:
    rng = draw_rng(seed, index)
    m = prior.sample(rng, 1)[0]
    d = obs.sample(rng, 1)[0]
    return PerturbedPair(m, d, index)


def draw_pairs(prior: GaussianPrior, obs: ObservationSpec, seed: int, n: int, start: int = 0) -> list[PerturbedPair]:
    """``n`` independent draws of (m', delta') ~ N(mean, C_M) x N(d_obs, C_D)."""
    if n < 1:
        raise ValueError(f"need n >= 1 draws, got {n}")
    return [draw_pair(prior, obs, seed, i) for i in range(start, start + n)]


@dataclass(frozen=True, eq=False)
class StochasticObjective:
    """L_i(m) = 0.5 |m - m'|^2_{C_M^{-1}} + 0.5 |g(m) - delta'|^2_{C_D^{-1}}."""

    pair: PerturbedPair
    prior: GaussianPrior
    obs: ObservationSpec
    model: ForwardModel

    @property
    def m_prime(self):
        return self.pair.m_prime

    @property
    def delta(self):
        return self.pair.delta_prime

    def prior_term(self, m):
        return 0.5 * self.prior.quad_form(m, self.pair.m_prime)

    def misfit_term(self, m, gm=None):
        gm = self.model.evaluate(m) if gm is None else gm
        r = self.obs.whiten(gm - self.pair.delta_prime)
        return 0.5 * float(r @ r)

    def value(self, m, gm=None) -> float:
        m = np.asarray(m, dtype=float)
        return self.prior_term(m) + self.misfit_term(m, gm)

    def gradient(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        prior_grad = self.prior.precision_apply(m - self.pair.m_prime)
        return prior_grad + self.model.misfit_gradient(m, self.obs, self.pair.delta_prime)

    def gradient_from(self, m, gm, jac) -> np.ndarray:
        """Gradient reusing an existing linearization ``(g(m), G)``."""
        prior_grad = self.prior.precision_apply(m - self.pair.m_prime)
        return prior_grad + jac.T @ self.obs.inv_apply(gm - self.pair.delta_prime)

    def hessian(self, m, gauss_newton: bool = False) -> np.ndarray:
        """Dense Hessian; the second-derivative term is dropped for Gauss-Newton."""
        m = np.asarray(m, dtype=float)
        gm, jac = self.model.linearize(m)
        h = self.prior.precision() + jac.T @ self.obs.inv_apply(jac)
        if not gauss_newton:
            w = self.obs.inv_apply(gm - self.pair.delta_prime)
            h = h + self.model.contracted_hessian(m, w)
        return 0.5 * (h + h.T)

    def map_residual(self, m) -> np.ndarray:
        """m + C_M G^T C_D^{-1} (g(m) - delta') - m', zero at a critical point."""
        gm, jac = self.model.linearize(np.asarray(m, dtype=float))
        shift = self.prior.cov_apply(jac.T @ self.obs.inv_apply(gm - self.pair.delta_prime))
        return m + shift - self.pair.m_prime


def objective_value(obj: StochasticObjective, m) -> float:
    return obj.value(m)


def objective_gradient(obj: StochasticObjective, m) -> np.ndarray:
    return obj.gradient(m)
