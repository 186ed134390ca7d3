"""Verification suites, one per acceptance criterion.

Every suite takes ``seed`` plus optional ``epsilons``/``replicas`` overrides and
returns a JSON-ready dict with at least ``name``, ``passed`` and ``runtime_s``.
"""

from __future__ import annotations

import math
import time

import numpy as np

from hsep.dynamics import ParticleConfig, parallel_step, run_trajectory, sequential_step
from hsep.env import BernoulliEnv
from hsep.kernels import kernel_scaling_probe, tilted_kernel
from hsep.model import ModelParams
from hsep.transform import (FieldRecorder, make_near_equilibrium_ic, make_step_ic, scale_field,
                            scale_times, step_mass_factor)
from hsep.verify import (TestFunction, check_conditional_covariance, check_decomposition,
                         check_duality_evolution, check_qv_approx, martingale_problem_stats,
                         near_eq_moment_probe, step_moment_probe)

LADDER = (0.4, 0.2, 0.1)


def _timed(fn):
    def wrapper(seed: int = 0, epsilons=None, replicas=None, **kw):
        t0 = time.perf_counter()
        out = fn(seed=seed, epsilons=epsilons, replicas=replicas, **kw)
        out["runtime_s"] = time.perf_counter() - t0
        out["seed"] = seed
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_params(rng: np.random.Generator, scaling: bool = False) -> ModelParams:
    nu = float(rng.uniform(0.0, 0.9))
    alpha = float(rng.uniform(0.1, 4.0))
    J = int(rng.integers(1, 4))
    rho = float(rng.uniform(0.2, 0.8))
    if scaling:
        return ModelParams.scaling(float(rng.uniform(0.05, 0.6)), nu=nu, alpha=alpha, J=J, rho=rho)
    return ModelParams(q=float(rng.uniform(0.05, 0.95)), nu=nu, alpha=alpha, J=J, rho=rho)


def random_configs(rng: np.random.Generator, count: int, n_particles: int,
                   mean_gap: float = 2.0) -> ParticleConfig:
    """Strictly decreasing positions with geometric gaps (zero gaps included)."""
    gaps = rng.geometric(1 / (1 + mean_gap), size=(count, n_particles)) - 1
    gaps[:, 0] = 0
    y = int(rng.integers(-20, 20)) - np.cumsum(gaps + 1, axis=1)
    m = rng.integers(-5, 6, size=count)
    return ParticleConfig(m, y)


@_timed
def coupling(seed=0, epsilons=None, replicas=None, n_configs: int = 10_000, max_particles: int = 50,
             steps: int = 20, groups: int = 4):
    """Sequential and parallel updates fed the same draws give identical trajectories."""
    rng = np.random.default_rng([seed, 0xC0])
    n_configs = replicas or n_configs
    per_size = max(1, n_configs // max_particles)
    mismatches, checked = 0, 0
    for N in range(1, max_particles + 1):
        for chunk in np.array_split(np.arange(per_size), groups):
            if not len(chunk):
                continue
            p = random_params(rng)
            cfg = random_configs(rng, len(chunk), N, mean_gap=float(rng.uniform(0.2, 5)))
            env = BernoulliEnv(p, seed, tuple(int(N * per_size + i) for i in chunk))
            a = b = cfg
            for s in range(steps):
                a, _ = parallel_step(a, s, env)
                b = sequential_step(b, s, env)
                mismatches += int(np.any(a.y != b.y, axis=1).sum())
            checked += len(chunk)
    return {"name": "coupling", "configs": checked, "steps": steps,
            "mismatched_steps": mismatches, "passed": mismatches == 0}


@_timed
def tilted(seed=0, epsilons=None, replicas=None, n_tuples: int = 100):
    """Mass, mean and variance of the tilted one-step kernel for random parameters."""
    rng = np.random.default_rng([seed, 0x71])
    worst = {"mass": 0.0, "mean": 0.0, "variance": 0.0}
    for _ in range(replicas or n_tuples):
        p = random_params(rng, scaling=True)
        c = p.constants
        for s in range(p.J):
            k = tilted_kernel(s, p)
            worst["mass"] = max(worst["mass"], abs(k.total() - 1))
            worst["mean"] = max(worst["mean"], abs(k.mean()))
            worst["variance"] = max(worst["variance"], abs(k.variance() - c.r_star ** 2 * c.sigma_at(s)))
    tol = {"mass": 1e-12, "mean": 1e-10, "variance": 1e-10}
    return {"name": "tilted", "worst": worst, "tolerance": tol,
            "passed": all(worst[k] <= tol[k] for k in tol)}


@_timed
def decomposition(seed=0, epsilons=None, replicas=None, span: int = 16, window: int = 200,
                  tol: float = 1e-9):
    """Discrete SHE residual for step and near-equilibrium data."""
    rows = []
    R = replicas or 100
    for eps in epsilons or (0.4, 0.2):
        p = ModelParams.scaling(eps)
        for ic in ("step", "near_eq"):
            if ic == "step":
                cfg = make_step_ic(window, R)
            else:
                cfg = make_near_equilibrium_ic(window, seed, p, replicas=R)
            env = BernoulliEnv(p, seed, tuple(range(R)))
            t1 = 3
            traj = run_trajectory(cfg, t1 + span, env, keep_records=True)
            for a, b in ((0, span), (t1, t1 + span), (t1 + span - 1, t1 + span)):
                rep = check_decomposition(traj, a, b, p, window=(0, window))
                rows.append({"epsilon": eps, "ic": ic, **rep.to_dict()})
    worst = max(r["max_residual"] for r in rows)
    return {"name": "decomposition", "realizations": R, "checks": rows, "max_residual": worst,
            "tolerance": tol, "passed": worst <= tol}


def _identity_suite(tag: int, check, seed, n_configs, max_particles=40):
    rng = np.random.default_rng([seed, tag])
    worst, count = 0.0, 0
    done = 0
    while done < n_configs:
        batch = min(10, n_configs - done)
        p = random_params(rng)
        N = int(rng.integers(2, max_particles + 1))
        cfg = random_configs(rng, batch, N, mean_gap=float(rng.uniform(0.2, 6)))
        s = int(rng.integers(0, 50))
        rep = check(cfg, s, p)
        worst = max(worst, rep.max_discrepancy)
        count += rep.n_checked
        done += batch
    return worst, count


@_timed
def covariance(seed=0, epsilons=None, replicas=None, n_configs: int = 1000, max_sep: int = 10,
               tol: float = 1e-12):
    """Exact conditional covariance of K against the lambda-product form."""
    worst, count = _identity_suite(0xC5, lambda c, s, p: check_conditional_covariance(c, s, p, max_sep),
                                   seed, replicas or n_configs)
    return {"name": "covariance", "configs": replicas or n_configs, "pairs": count,
            "max_discrepancy": worst, "tolerance": tol, "passed": worst <= tol}


@_timed
def duality(seed=0, epsilons=None, replicas=None, n_configs: int = 1000, tol: float = 1e-12):
    """One-step duality: move-probability average against the kernel convolution."""
    worst, count = _identity_suite(0xD0, check_duality_evolution, seed, replicas or n_configs)
    return {"name": "duality", "configs": replicas or n_configs, "labels": count,
            "max_discrepancy": worst, "tolerance": tol, "passed": worst <= tol}


@_timed
def martingale(seed=0, epsilons=None, replicas=None, batch: int = 2000, taus=None):
    """Increments of N_psi and N-hat_psi have zero ensemble mean (4 sigma, Bonferroni)."""
    eps = (epsilons or (0.2,))[0]
    R = replicas or 10_000
    taus = np.linspace(0.05, 0.5, 10) if taus is None else np.asarray(taus)
    p = ModelParams.scaling(eps)
    c = p.constants
    psi = TestFunction(0.0, 1.5, "bump4")
    per_r = c.r_star / p.eps
    left = int(6 * per_r)
    drift = c.mu_hat(c.t_of_tau(taus[-1], p.J) + 1)
    width = int(math.ceil(psi.support[1] * per_r + drift + 45))
    parts = {"N": [], "N_hat": [], "qv": [], "qv_cont": [], "identity": 0.0}
    for b0 in range(0, R, batch):
        nb = min(batch, R - b0)
        cfg = make_near_equilibrium_ic(width, seed, p, left_buffer=left, replicas=nb, replica_start=b0)
        env = BernoulliEnv(p, seed, tuple(range(b0, b0 + nb)))
        res = martingale_problem_stats(cfg, env, psi, taus, p)
        for k in ("N", "N_hat", "qv", "qv_cont"):
            parts[k].append(res[k])
        parts["identity"] = max(parts["identity"], res["identity_residual"])
        t_grid = res["t"]
    from hsep.verify import increment_test
    N = np.concatenate(parts["N"])
    N_hat = np.concatenate(parts["N_hat"])
    test_N = increment_test(N, t_grid)
    test_Nh = increment_test(N_hat, t_grid)
    var_N = float(N[:, -1].var(ddof=1))
    qv = float(np.concatenate(parts["qv"])[:, -1].mean())
    qv_cont = float(np.concatenate(parts["qv_cont"])[:, -1].mean())
    return {
        "name": "martingale", "epsilon": eps, "replicas": R, "taus": taus.tolist(),
        "test_N": test_N, "test_N_hat": test_Nh, "identity_residual": parts["identity"],
        "var_N_final": var_N, "mean_qv_final": qv, "mean_qv_continuum_final": qv_cont,
        "passed": bool(test_N["passed"] and test_Nh["passed"] and parts["identity"] <= 1e-9),
    }


@_timed
def qv_approx(seed=0, epsilons=None, replicas=None, tau_max: float = 0.5, prefactor_tol: float = 0.1):
    """Quadratic variation against its leading eps^2 prefactor on near-equilibrium data."""
    R = replicas or 200
    rows = []
    for eps in epsilons or LADDER:
        p = ModelParams.scaling(eps)
        c = p.constants
        per_r = c.r_star / eps
        left, width = int(6 * per_r), int(4 * per_r)
        cols = np.arange(left, left + int(2 * per_r))
        cfg = make_near_equilibrium_ic(width, seed, p, left_buffer=left, replicas=R)
        env = BernoulliEnv(p, seed, tuple(range(R)))
        T = int(round(c.t_of_tau(tau_max, p.J)))
        at = {0, T // 2, T - 1}
        found = []

        def obs(s, cfg_, rec):
            if s in at:
                found.append(check_qv_approx(cfg_, s, p, cols))

        run_trajectory(cfg, T, env, observers=[obs], store=False)
        rows.append({
            "epsilon": eps,
            "mean_abs_rel_error": float(np.mean([f["mean_abs_rel_error"] for f in found])),
            "fitted_prefactor": float(np.mean([f["fitted_prefactor"] for f in found])),
            "target": found[0]["target"],
            "lambda1_ratio": float(np.mean([f["lambda1_ratio"] for f in found])),
            "lambda2_ratio": float(np.mean([f["lambda2_ratio"] for f in found])),
        })
    errs = [r["mean_abs_rel_error"] for r in rows]
    decreasing = all(a > b for a, b in zip(errs, errs[1:]))
    last = rows[-1]
    pref_err = abs(last["fitted_prefactor"] - last["target"]) / last["target"]
    return {"name": "qv_approx", "rows": rows, "decreasing": decreasing,
            "prefactor_rel_error": pref_err, "passed": bool(decreasing and pref_err <= prefactor_tol)}


@_timed
def moments(seed=0, epsilons=None, replicas=None, eps_near_eq: float = 0.1, eps_step: float = 0.02):
    """Hoelder exponents of near-equilibrium Z and the one-point blowup for step data."""
    R = replicas or 1000
    if epsilons:
        eps_near_eq = eps_step = epsilons[0]
    ne = near_eq_moment_probe(ModelParams.scaling(eps_near_eq), R, seed=seed)
    st = step_moment_probe(ModelParams.scaling(eps_step), R, seed=seed)
    return {"name": "moments", "near_eq": ne, "step": st,
            "passed": bool(ne["spatial_ok"] and ne["temporal_ok"] and st["ok"])}


def step_log_samples(eps: float, replicas: int, seed: int, tau: float = 0.5, r: float = 0.0,
                     batch: int = 1000) -> np.ndarray:
    """log Z-tilde(tau, r) for the step initial condition, one value per replica."""
    p = ModelParams.scaling(eps)
    c = p.constants
    _, need = scale_times([tau], p)
    T = need[-1]
    N = int(math.ceil(c.mu_hat(T) + abs(r) * c.r_star / eps)) + 4
    out = []
    for b0 in range(0, replicas, batch):
        nb = min(batch, replicas - b0)
        env = BernoulliEnv(p, seed, tuple(range(b0, b0 + nb)))
        rec = FieldRecorder(p, need)
        run_trajectory(make_step_ic(N, nb), T, env, observers=[rec], store=False)
        sf = scale_field(rec.logz, rec.m, p, [tau], [r], prefactor=step_mass_factor(p))
        out.append(sf.H[:, 0, 0])
    return np.concatenate(out)


@_timed
def convergence(seed=0, epsilons=None, replicas=None, tau: float = 0.5, r: float = 0.0,
                she_dx=(0.1, 0.05), she_paths: int = 20_000, var_tol: float = 0.15):
    """One-point log Z-tilde statistics approach the extrapolated SHE reference."""
    from hsep.she import SHEGrid, compare_one_point, solve_she

    R = replicas or 4000
    particle = {eps: step_log_samples(eps, R, seed, tau, r) for eps in epsilons or LADDER}
    ref = {}
    for dx in she_dx:
        n = math.ceil(tau / (dx * dx / 2) - 1e-9)
        grid = SHEGrid(dx, tau / n, 4.0, seed=seed, boundary="dirichlet")
        solve_she("delta", tau, grid, replicas=she_paths)
        ref[dx] = np.log(grid.value_at(tau, r))
    rep = compare_one_point(particle, ref, tau, r)
    rep.update({"name": "convergence", "replicas": R, "she_paths": she_paths,
                "passed": bool(rep["mean_monotone"] and rep["var_monotone"]
                               and rep["final_var_rel_gap"] <= var_tol)})
    return rep


@_timed
def kernels(seed=0, epsilons=None, replicas=None, T: float = 1.0):
    """Sup-norm decay and exponential moments of the heat kernel."""
    rep = kernel_scaling_probe(T, epsilons or LADDER, ModelParams.scaling(0.2))
    rep["eps"] = {repr(k): v for k, v in rep["eps"].items()}
    rep["name"] = "kernels"
    return rep


SUITES = {
    "coupling": coupling,
    "tilted": tilted,
    "decomposition": decomposition,
    "covariance": covariance,
    "duality": duality,
    "martingale": martingale,
    "qv_approx": qv_approx,
    "moments": moments,
    "convergence": convergence,
    "kernels": kernels,
}
