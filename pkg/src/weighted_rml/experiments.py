"""Ensemble runners: all critical points, one critical point per draw, and a
Gaussian (Laplace) approximation baseline."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .darcy import DarcyModel, DarcyProblem, PermTransform, synthetic_observations
from .forward import ForwardModel, ObservationSpec, banana_model, linear_model, quadratic_model
from .mesh import GridSpec
from .perturb import INIT_STREAM, LAPLACE_STREAM, PROBE_STREAM, PerturbedPair, StochasticObjective, draw_pair, draw_rng
from .prior import GaussianPrior, MaternSpec, build_dense_prior, build_matern_prior
from .solve import CriticalPoint, all_critical_points_cubic, classify, minimize
from .weights import lowrank_gep, misfit_hessian_action, normalize_and_ess, point_weight

logger = logging.getLogger(__name__)

DARCY_CASES = {
    "darcy_case1": ("lognormal", 2.0),
    "darcy_case2": ("monotonic_tanh", 0.7),
    "darcy_case3": ("nonmonotonic_tanh", 0.7),
}


@dataclass(eq=False)
class Problem:
    name: str
    model: ForwardModel
    prior: GaussianPrior
    obs: ObservationSpec
    truth: np.ndarray | None = None
    darcy: DarcyProblem | None = None
    probe_nodes: dict = field(default_factory=dict)


def build_problem(config: ExperimentConfig) -> Problem:
    """Forward model, prior and data for one of the named test problems."""
    name = config.problem
    if name == "quadratic":
        return Problem(name, quadratic_model(), build_dense_prior([0.8], [[1.0]]), ObservationSpec.iid([1.0], 0.5))
    if name == "banana":
        return Problem(name, banana_model(4), build_dense_prior(np.zeros(4), 25.0 * np.eye(4)), ObservationSpec.iid([4.0], 4.0))
    if name == "linear_gaussian":
        rng = np.random.default_rng(config.problem_seed)
        g = rng.standard_normal((3, 5))
        a = rng.standard_normal((5, 5))
        cov = a @ a.T / 5 + 0.5 * np.eye(5)
        mean = rng.standard_normal(5)
        truth = mean + np.linalg.cholesky(cov) @ rng.standard_normal(5)
        d = g @ truth + 0.5 * rng.standard_normal(3)
        return Problem(name, linear_model(g), build_dense_prior(mean, cov), ObservationSpec.iid(d, 0.5), truth=truth)

    kind, default_v = DARCY_CASES[name]
    grid = GridSpec(*config.grid)
    prior = build_matern_prior(MaternSpec(config.gamma, config.alpha, grid, boundary=config.prior_boundary))
    v = default_v if config.flux_v is None else config.flux_v
    problem = DarcyProblem(grid, PermTransform(kind), v, noise_sigma=config.noise_sigma)
    # every case shares one latent truth drawn with the problem seed
    truth = prior.sample(np.random.default_rng(config.problem_seed), 1)[0]
    obs = synthetic_observations(problem, truth, np.random.default_rng([config.problem_seed, 1]))
    probes = {}
    for x, y in config.probes:
        d2 = np.sum((grid.coords - (x, y)) ** 2, axis=1)
        probes[f"{x:g}_{y:g}"] = int(np.argmin(d2))
    return Problem(name, DarcyModel(problem), prior, obs, truth=truth, darcy=problem, probe_nodes=probes)


@dataclass(eq=False)
class Ensemble:
    """Weighted critical points gathered from one run."""

    m: np.ndarray
    draw_index: np.ndarray
    kind: np.ndarray
    log_weight: np.ndarray
    weight: np.ndarray
    misfit: np.ndarray
    iters: np.ndarray
    grad_norm: np.ndarray
    n_crit: np.ndarray
    n_draws: int
    n_failed: int
    ess: float
    method: str
    algorithm: str
    problem: str

    @property
    def n_points(self) -> int:
        return len(self.weight)

    @property
    def n_converged(self) -> int:
        return self.n_points

    @property
    def efficiency(self) -> float:
        return self.ess / self.n_points

    @property
    def mean_sq_misfit(self) -> float:
        return float(np.sum(self.weight * self.misfit))

    def select(self, mask, reweight: bool = True) -> "Ensemble":
        """Sub-ensemble (e.g. minimizers only) with renormalized weights."""
        mask = np.asarray(mask, dtype=bool)
        lw = self.log_weight[mask]
        w, ess = normalize_and_ess(lw) if reweight else (np.full(mask.sum(), 1.0 / mask.sum()), float(mask.sum()))
        return Ensemble(
            self.m[mask], self.draw_index[mask], self.kind[mask], lw, w, self.misfit[mask],
            self.iters[mask], self.grad_norm[mask], self.n_crit[mask], self.n_draws,
            self.n_failed, ess, self.method, self.algorithm, self.problem,
        )

    def uniform(self) -> "Ensemble":
        return self.select(np.ones(self.n_points, dtype=bool), reweight=False)

    def weighted_mean(self) -> np.ndarray:
        return self.weight @ self.m

    def weighted_cov(self) -> np.ndarray:
        c = self.m - self.weighted_mean()
        return (self.weight[:, None] * c).T @ c


def _records_to_ensemble(records, config, n_draws, problem, method, uniform=False) -> Ensemble:
    points = [r for rec in records for r in rec]
    good = [p for p in points if p["converged"] and np.isfinite(p["log_weight"])]
    n_failed = len(points) - len(good)
    if not good:
        raise RuntimeError("empty ensemble: every minimization failed")
    lw = np.array([p["log_weight"] for p in good])
    if uniform:
        w, ess = np.full(len(good), 1.0 / len(good)), float(len(good))
    else:
        w, ess = normalize_and_ess(lw)
    return Ensemble(
        m=np.array([p["m"] for p in good]),
        draw_index=np.array([p["draw"] for p in good]),
        kind=np.array([p["kind"] for p in good]),
        log_weight=lw,
        weight=w,
        misfit=np.array([p["misfit"] for p in good]),
        iters=np.array([p["iters"] for p in good]),
        grad_norm=np.array([p["grad_norm"] for p in good]),
        n_crit=np.array([p["n_crit"] for p in good]),
        n_draws=n_draws,
        n_failed=n_failed,
        ess=ess,
        method=method,
        algorithm=config.algorithm,
        problem=config.problem,
    )


def _record(problem: Problem, config: ExperimentConfig, point: CriticalPoint, n_crit: int, draw: int, method: str | None):
    rec = {
        "m": point.m,
        "draw": draw,
        "kind": point.kind,
        "converged": point.converged,
        "iters": point.iters,
        "grad_norm": point.grad_norm,
        "n_crit": n_crit,
        "log_weight": 0.0,
    }
    gm = problem.model.evaluate(point.m)
    rec["misfit"] = float(np.sum((gm - problem.obs.d_obs) ** 2))
    if method is not None and point.converged:
        comp = point_weight(
            problem.model, problem.prior, problem.obs, point.m, point.delta, method,
            n_crit=n_crit, rank=config.rank, oversample=config.oversample,
            rng=draw_rng(config.seed, draw, PROBE_STREAM), cd_inflation=config.cd_inflation,
        )
        rec["log_weight"] = comp.log_weight_unnorm
    return rec


def _map_draws(fn, n, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def _objective(problem: Problem, pair: PerturbedPair) -> StochasticObjective:
    return StochasticObjective(pair, problem.prior, problem.obs, problem.model)


def run_algorithm1(config: ExperimentConfig, problem: Problem | None = None, threads: int = 1) -> Ensemble:
    """Every critical point of every draw.

    Keeping all preimages of a draw gives a point intensity of
    ``q(m', delta') |J|`` without a 1/n(m') factor, so the root-count
    multiplier is off unless ``config.root_count_factor`` is set.
    """
    problem = build_problem(config) if problem is None else problem
    if config.problem not in ("quadratic", "linear_gaussian"):
        raise ValueError(f"critical points of {config.problem!r} cannot be enumerated")

    def one(i):
        obj = _objective(problem, draw_pair(problem.prior, problem.obs, config.seed, i))
        if config.problem == "quadratic":
            points = all_critical_points_cubic(obj)
        else:
            h = obj.hessian(obj.m_prime)
            m = obj.m_prime - np.linalg.solve(h, obj.gradient(obj.m_prime))
            points = [classify(obj, CriticalPoint(m, obj.delta, grad_norm=float(np.linalg.norm(obj.gradient(m))), source_draw=i, objective=obj.value(m)))]
        n_crit = len(points) if config.root_count_factor else 1
        return [_record(problem, config, p, n_crit, i, config.weight_method) for p in points]

    records = _map_draws(one, config.n_samples, threads)
    return _records_to_ensemble(records, config, config.n_samples, problem, config.weight_method)


def _initial_point(problem, config, pair):
    strategy = config.solver.init_strategy
    if strategy == "random_prior_draw":
        return problem.prior.sample(draw_rng(config.seed, pair.draw_index, INIT_STREAM), 1)[0]
    return pair.m_prime


def run_algorithm2(config: ExperimentConfig, problem: Problem | None = None, threads: int = 1, uniform: bool | None = None) -> Ensemble:
    """One minimization per draw, weighted with n(m') = 1; failures are dropped."""
    problem = build_problem(config) if problem is None else problem
    uniform = config.algorithm == "unweighted_rml" if uniform is None else uniform

    def one(i):
        pair = draw_pair(problem.prior, problem.obs, config.seed, i)
        obj = _objective(problem, pair)
        try:
            point = minimize(obj, config.solver, _initial_point(problem, config, pair))
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            logger.warning("draw %d failed: %s", i, exc)
            return [{"converged": False, "log_weight": -np.inf}]
        if point.converged and problem.model.has_second_derivative:
            point = classify(obj, point)
        return [_record(problem, config, point, 1, i, config.weight_method)]

    records = _map_draws(one, config.n_samples, threads)
    ens = _records_to_ensemble(records, config, config.n_samples, problem, config.weight_method)
    return ens.uniform() if uniform else ens


def find_map(problem: Problem, config: ExperimentConfig) -> CriticalPoint:
    """Minimizer of the unperturbed negative log posterior, started at the prior mean."""
    pair = PerturbedPair(problem.prior.mean, problem.obs.d_obs, -1)
    point = minimize(_objective(problem, pair), config.solver, problem.prior.mean)
    if not point.converged:
        raise FloatingPointError(f"MAP minimization did not converge (|grad| = {point.grad_norm:.3e})")
    return point


def run_laplace_baseline(config: ExperimentConfig, problem: Problem | None = None, threads: int = 1) -> Ensemble:
    """Unweighted draws from N(m_MAP, (C_M^{-1} + G^T C_D^{-1} G)^{-1})."""
    problem = build_problem(config) if problem is None else problem
    prior, obs = problem.prior, problem.obs
    mp = find_map(problem, config)
    jac = problem.model.linearize(mp.m)[1]
    rank = min(obs.dim, prior.dim) if config.rank is None else config.rank
    lr = lowrank_gep(misfit_hessian_action(jac, obs), prior, rank, config.oversample, rng=draw_rng(config.seed, 0, LAPLACE_STREAM))
    u_hat = prior.inv_factor.T @ lr.eigvecs  # orthonormal eigenvectors of the preconditioned Hessian
    d = 1.0 / np.sqrt(1.0 + lr.eigvals) - 1.0

    def one(i):
        xi = draw_rng(config.seed, i + 1, LAPLACE_STREAM).standard_normal(prior.dim)
        m = mp.m + prior.solve_factor_t(xi + u_hat @ (d * (u_hat.T @ xi)))
        point = CriticalPoint(m, obs.d_obs, kind="sample", grad_norm=np.nan, iters=mp.iters, source_draw=i)
        return [_record(problem, config, point, 1, i, None)]

    records = _map_draws(one, config.n_samples, threads)
    ens = _records_to_ensemble(records, config, config.n_samples, problem, "none", uniform=True)
    return ens


def run_experiment(config: ExperimentConfig, problem: Problem | None = None, threads: int = 1) -> Ensemble:
    if config.algorithm == "all_critical_points":
        return run_algorithm1(config, problem, threads)
    if config.algorithm == "laplace_baseline":
        return run_laplace_baseline(config, problem, threads)
    return run_algorithm2(config, problem, threads)
