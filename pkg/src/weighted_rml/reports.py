"""Plot-ready tables, run summaries and ensemble persistence."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict
from .darcy import write_field_csv
from .experiments import Ensemble, Problem, build_problem
from .oracle import (
    banana_log_conditional,
    gaussian_linear_posterior,
    grid_posterior_1d,
    grid_posterior_2d,
    histogram_tv_distance,
    quadratic_log_posterior,
    weighted_ks_distance,
)

SCHEMA_VERSION = 1
ENSEMBLE_FILE = "ensemble.bin"
_ARRAYS = ("m", "draw_index", "kind", "log_weight", "weight", "misfit", "iters", "grad_norm", "n_crit")


def save_ensemble(path, ensemble: Ensemble, config: ExperimentConfig) -> None:
    meta = {
        "n_draws": ensemble.n_draws,
        "n_failed": ensemble.n_failed,
        "ess": ensemble.ess,
        "method": ensemble.method,
        "algorithm": ensemble.algorithm,
        "problem": ensemble.problem,
        "config": config.to_dict(),
    }
    arrays = {k: np.asarray(getattr(ensemble, k)) for k in _ARRAYS}
    arrays["kind"] = arrays["kind"].astype(str)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_ensemble(path) -> tuple[Ensemble, ExperimentConfig]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k: data[k] for k in _ARRAYS}
    ens = Ensemble(
        **arrays,
        n_draws=meta["n_draws"],
        n_failed=meta["n_failed"],
        ess=meta["ess"],
        method=meta["method"],
        algorithm=meta["algorithm"],
        problem=meta["problem"],
    )
    return ens, config_from_dict(meta["config"])


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def weight_misfit_correlation(ensemble: Ensemble) -> float:
    lw, mis = ensemble.log_weight, ensemble.misfit
    ok = np.isfinite(lw)
    if ok.sum() < 2 or np.ptp(lw[ok]) == 0 or np.ptp(mis[ok]) == 0:
        return float("nan")
    return float(np.corrcoef(lw[ok], mis[ok])[0, 1])


def quadratic_reference():
    return grid_posterior_1d(quadratic_log_posterior, (-4.0, 5.0))


def banana_reference():
    return grid_posterior_2d(banana_log_conditional, (-60.0, 5.0), (-25.0, 25.0), n=600, tail=1e-5)


def accuracy_metrics(ensemble: Ensemble, problem: Problem) -> dict:
    """Distance to the brute-force reference where one is available."""
    if ensemble.problem == "quadratic":
        return {"ks_distance": weighted_ks_distance(ensemble.m[:, 0], ensemble.weight, quadratic_reference())}
    if ensemble.problem == "banana":
        return {"tv_distance_m1_m2": histogram_tv_distance(ensemble.m[:, :2], ensemble.weight, banana_reference())}
    if ensemble.problem == "linear_gaussian":
        mean, cov = gaussian_linear_posterior(
            problem.model.matrix, problem.prior.mean, problem.prior.covariance(), problem.obs.d_obs, problem.obs.noise_cov
        )
        return {
            "mean_abs_error": float(np.max(np.abs(ensemble.weighted_mean() - mean))),
            "cov_rel_error": float(np.linalg.norm(ensemble.weighted_cov() - cov) / np.linalg.norm(cov)),
        }
    return {}


def summarize(ensemble: Ensemble, config: ExperimentConfig, problem: Problem) -> dict:
    kinds, counts = np.unique(ensemble.kind, return_counts=True)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "problem": config.problem,
        "algorithm": config.algorithm,
        "weight_method": ensemble.method,
        "seed": config.seed,
        "n_draws": ensemble.n_draws,
        "n_points": ensemble.n_points,
        "n_converged": ensemble.n_converged,
        "n_failed": ensemble.n_failed,
        "points_per_draw": ensemble.n_points / ensemble.n_draws,
        "ess": ensemble.ess,
        "efficiency": ensemble.efficiency,
        "mean_sq_misfit": ensemble.mean_sq_misfit,
        "expected_sq_misfit": float(np.trace(problem.obs.noise_cov)),
        "corr_log_weight_misfit": _finite_or_none(weight_misfit_correlation(ensemble)),
        "kinds": {str(k): int(c) for k, c in zip(kinds, counts)},
        "mean_iters": float(np.mean(ensemble.iters)),
    }
    summary.update(accuracy_metrics(ensemble, problem))
    return summary


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _marginal_columns(ensemble: Ensemble, problem: Problem) -> dict:
    if problem.probe_nodes:
        return {name: node for name, node in problem.probe_nodes.items()}
    return {f"m{j + 1}": j for j in range(min(ensemble.m.shape[1], 4))}


def emit_reports(ensemble: Ensemble, config: ExperimentConfig, out_dir, problem: Problem | None = None) -> list[Path]:
    """Write CSV tables, summary.json and the reloadable ensemble to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config) if problem is None else problem
    e = ensemble
    written = []

    path = out / "weights.csv"
    _write_csv(
        path,
        ["draw_index", "kind", "misfit", "log_weight", "weight", "method"],
        ((int(i), k, repr(float(f)), repr(float(lw)), repr(float(w)), e.method)
         for i, k, f, lw, w in zip(e.draw_index, e.kind, e.misfit, e.log_weight, e.weight)),
    )
    written.append(path)

    path = out / "misfit_vs_weight.csv"
    order = np.argsort(e.misfit, kind="stable")
    _write_csv(path, ["sq_misfit", "log_weight", "weight"],
               ((repr(float(e.misfit[j])), repr(float(e.log_weight[j])), repr(float(e.weight[j]))) for j in order))
    written.append(path)

    transform = problem.darcy.transform if problem.darcy is not None else None
    for name, col in _marginal_columns(e, problem).items():
        path = out / f"marginals_{name}.csv"
        vals = e.m[:, col]
        if transform is not None:
            lk = transform.log_kappa(vals)
            rows = ((int(i), repr(float(v)), repr(float(k)), repr(float(w))) for i, v, k, w in zip(e.draw_index, vals, lk, e.weight))
            _write_csv(path, ["draw_index", "latent", "log_kappa", "weight"], rows)
        else:
            _write_csv(path, ["draw_index", "value", "weight"],
                       ((int(i), repr(float(v)), repr(float(w))) for i, v, w in zip(e.draw_index, vals, e.weight)))
        written.append(path)

    path = out / "convergence.csv"
    _write_csv(path, ["draw_index", "kind", "iters", "grad_norm"],
               ((int(i), k, int(it), repr(float(g))) for i, k, it, g in zip(e.draw_index, e.kind, e.iters, e.grad_norm)))
    written.append(path)

    path = out / "summary.json"
    path.write_text(json.dumps(summarize(e, config, problem), indent=2, sort_keys=True) + "\n")
    written.append(path)

    path = out / ENSEMBLE_FILE
    save_ensemble(path, e, config)
    written.append(path)
    return written


def emit_oracle(problem_name: str, out_dir, config: ExperimentConfig | None = None) -> list[Path]:
    """Reference density tables for the closed-form problems; truth fields for Darcy."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if problem_name == "quadratic":
        ref = quadratic_reference()
        path = out / "oracle_quadratic.csv"
        _write_csv(path, ["x", "density", "cdf"], zip(ref.x.tolist(), ref.density.tolist(), ref.cdf.tolist()))
        return [path]
    if problem_name == "banana":
        ref = banana_reference()
        path = out / "oracle_banana_m1_m2.csv"
        xx, yy = np.meshgrid(ref.x, ref.y, indexing="ij")
        _write_csv(path, ["m1", "m2", "mass"], zip(xx.ravel().tolist(), yy.ravel().tolist(), ref.mass.ravel().tolist()))
        return [path]
    config = config or config_from_dict({"problem": problem_name, "weight_method": "gauss_newton_dense"})
    problem = build_problem(config)
    if problem_name == "linear_gaussian":
        mean, cov = gaussian_linear_posterior(
            problem.model.matrix, problem.prior.mean, problem.prior.covariance(), problem.obs.d_obs, problem.obs.noise_cov
        )
        path = out / "oracle_linear_gaussian.json"
        path.write_text(json.dumps({"mean": mean.tolist(), "cov": cov.tolist()}, indent=2) + "\n")
        return [path]
    grid = problem.darcy.grid
    paths = [out / f"{problem_name}_truth_latent.csv", out / f"{problem_name}_truth_pressure.csv"]
    write_field_csv(paths[0], grid, problem.truth)
    write_field_csv(paths[1], grid, problem.darcy.solve_pressure(problem.truth).values)
    return paths
