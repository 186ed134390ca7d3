import itertools
import math

import numpy as np
import pytest

from hsep.dynamics import ParticleConfig, run_trajectory
from hsep.env import BernoulliEnv
from hsep.model import ModelParams, jump_probs
from hsep.transform import make_near_equilibrium_ic, make_step_ic
from hsep.verify import (TestFunction, bonferroni_z, check_conditional_covariance, check_decomposition,
                         check_duality_evolution, check_qv_approx, covariance_band, covariance_sides,
                         duality_sides, exact_covariance, increment_test, loglog_slope, martingale_problem_stats,
                         qv_prefactor, series_move_probs, spatial_structure)

P = ModelParams(q=0.6, nu=0.3, alpha=1.5, J=2, rho=0.4, epsilon=None)


def _near_eq_traj(p, steps, R=4, seed=3, width=40, left=8):
    cfg = make_near_equilibrium_ic(width, seed, p, left_buffer=left, replicas=R)
    env = BernoulliEnv(p, seed, tuple(range(R)))
    return run_trajectory(cfg, steps, env, keep_records=True)


@pytest.mark.parametrize("ic", ["step", "near_eq"])
def test_decomposition_exact(ic):
    p = ModelParams.scaling(0.3)
    if ic == "step":
        cfg = make_step_ic(60, 4)
        traj = run_trajectory(cfg, 16, BernoulliEnv(p, 1, (0, 1, 2, 3)), keep_records=True)
    else:
        traj = _near_eq_traj(p, 16)
    assert check_decomposition(traj, 5, 5, p).max_abs_residual == 0.0
    assert check_decomposition(traj, 3, 4, p).max_residual <= 1e-10
    rep = check_decomposition(traj, 0, 16, p)
    assert rep.max_residual <= 1e-9
    assert np.abs(rep.martingale_term).max() > 0
    with pytest.raises(ValueError):
        check_decomposition(traj, 4, 3, p)


def test_single_particle_duality():
    cfg = ParticleConfig.single(0, [3])
    for s in range(P.J):
        left, right = duality_sides(cfg, s, P)
        al = P.alpha_at(s)
        assert left[0] == pytest.approx(1 - (1 - P.q) * al / (1 + al), rel=1e-14)
        assert right[0] == pytest.approx(left[0], rel=1e-14)


def test_duality_on_packed_and_random_configs():
    rng = np.random.default_rng(5)
    g = rng.geometric(0.3, size=(6, 30)) - 1
    cfg = ParticleConfig(np.zeros(6), -np.cumsum(g + 1, axis=1))
    for s in range(P.J):
        assert check_duality_evolution(make_step_ic(25, 1), s, P).passed
        rep = check_duality_evolution(cfg, s, P)
        assert rep.passed and rep.n_checked == 180


def _brute_force_cov(cfg, s, j1, j2, p):
    # enumerate every outcome of the independent coins B_j, B'_j on labels 0..j2
    g = cfg.gaps()[0]
    pB, pBp = (np.atleast_1d(a) for a in jump_probs(s, g, p))
    n = j2 + 1
    E1 = E2 = E12 = 0.0
    for coins in itertools.product((0, 1), repeat=2 * n - 1):
        B, Bp = coins[:n], (None,) + coins[n:]
        w = 1.0
        for j in range(n):
            w *= pB[j] if B[j] else 1 - pB[j]
            if j > 0:
                w *= pBp[j] if Bp[j] else 1 - pBp[j]
        K = [B[0]]
        for j in range(1, n):
            K.append(Bp[j] if K[-1] else B[j])
        E1 += w * K[j1]
        E2 += w * K[j2]
        E12 += w * K[j1] * K[j2]
    return E12 - E1 * E2


def test_exact_covariance_against_enumeration():
    cfg = ParticleConfig.single(0, [0, -1, -4, -5, -9, -10])
    for j1, j2 in [(0, 0), (1, 3), (2, 5), (4, 5), (5, 5)]:
        assert exact_covariance(cfg, 1, j1, j2, P) == pytest.approx(_brute_force_cov(cfg, 1, j1, j2, P), abs=1e-14)


def test_covariance_identity_band_and_scalar_agree():
    rng = np.random.default_rng(9)
    g = rng.geometric(0.35, size=(3, 20)) - 1
    cfg = ParticleConfig(np.full(3, -2), -np.cumsum(g + 1, axis=1))
    left, right = covariance_band(cfg, 0, P, 6, replica=1)
    for j, d in [(0, 0), (3, 2), (10, 6), (13, 6)]:
        l, r = covariance_sides(cfg, 0, j, j + d, P, replica=1)
        assert left[j, d] == pytest.approx(l, abs=1e-15)
        assert right[j, d] == pytest.approx(r, abs=1e-14)
    assert np.isnan(left[19, 1])
    for s in range(P.J):
        assert check_conditional_covariance(cfg, s, P, max_sep=10).passed


def test_covariance_decay_on_packed_config():
    # a packed row has Z(n)/Z(n+1) = 1/rho, so stepping the separation multiplies by (nu+alpha)rho/(1+alpha) * 1/rho
    p = ModelParams(q=0.6, nu=0.3, alpha=1.5, J=1, rho=0.4)
    cfg = make_step_ic(20)
    left, right = covariance_band(cfg, 0, p, 5)
    np.testing.assert_allclose(left[:15], right[:15], atol=1e-15)
    ratio = right[2, 1:] / right[2, :-1]
    np.testing.assert_allclose(ratio * p.rho, (p.nu + p.alpha) * p.rho / (1 + p.alpha), rtol=1e-12)


def test_series_matches_scan_probabilities():
    from hsep.dynamics import conditional_move_probs

    rng = np.random.default_rng(4)
    g = rng.geometric(0.4, size=(1, 25)) - 1
    cfg = ParticleConfig(np.zeros(1), -np.cumsum(g + 1, axis=1))
    np.testing.assert_allclose(series_move_probs(cfg.gaps()[0], 1, P), conditional_move_probs(cfg, 1, P)[0],
                               atol=1e-14)


def test_qv_prefactor_and_approx_improves():
    errs = []
    for eps in (0.4, 0.2, 0.1):
        p = ModelParams.scaling(eps)
        cfg = make_near_equilibrium_ic(200, 1, p, replicas=20)
        rep = check_qv_approx(cfg, 0, p, cols=slice(50, None))
        ag = p.alpha * p.constants.gamma
        assert rep["target"] == pytest.approx(ag / (1 + ag) ** 2)
        errs.append(rep["mean_abs_rel_error"])
    assert errs[0] > errs[1] > errs[2]
    assert qv_prefactor(ModelParams.scaling(0.1)) > 0


@pytest.mark.parametrize("shape", ["bump3", "bump4", "plateau"])
def test_test_function_derivatives(shape):
    psi = TestFunction(0.3, 1.7, shape)
    x = np.linspace(-1.2, 1.8, 301)
    h = 1e-5
    d1 = (psi(x + h) - psi(x - h)) / (2 * h)
    d2 = (psi(x + h) - 2 * psi(x) + psi(x - h)) / h ** 2
    np.testing.assert_allclose(psi.derivative(x, 1), d1, atol=1e-6)
    np.testing.assert_allclose(psi.derivative(x, 2), d2, atol=2e-4)
    assert np.all(psi(np.array([-1.5, 2.1])) == 0)
    with pytest.raises(ValueError):
        TestFunction(0, 1, "box")


def test_bonferroni_threshold():
    assert bonferroni_z(1) == 4.0
    assert bonferroni_z(10 ** 6) > 5


def test_increment_test_flags_drift():
    rng = np.random.default_rng(0)
    flat = rng.normal(size=(5000, 6)).cumsum(axis=1)
    assert increment_test(flat, range(6))["passed"]
    drifted = flat + 0.2 * np.arange(6)
    rep = increment_test(drifted, range(6))
    assert not rep["passed"] and rep["first_failure_t"] == 1


def test_small_martingale_run():
    p = ModelParams.scaling(0.4)
    c = p.constants
    per_r = c.r_star / p.eps
    R = 2000
    taus = [0.05, 0.1, 0.15]
    psi = TestFunction(0.0, 1.5)
    left = int(6 * per_r)
    width = int(math.ceil(1.5 * per_r + c.mu_hat(c.t_of_tau(0.15, p.J) + 1) + 45))
    cfg = make_near_equilibrium_ic(width, 2, p, left_buffer=left, replicas=R)
    res = martingale_problem_stats(cfg, BernoulliEnv(p, 2, tuple(range(R))), psi, taus, p)
    assert res["identity_residual"] <= 1e-10
    assert res["test_N"]["passed"] and res["test_N_hat"]["passed"]
    # E N^2 = E <N>: the variance of N matches the mean quadratic variation
    assert res["N"][:, -1].var() == pytest.approx(res["qv"][:, -1].mean(), rel=0.15)


def test_martingale_window_guard():
    p = ModelParams.scaling(0.4)
    cfg = make_near_equilibrium_ic(10, 0, p, left_buffer=2, replicas=2)
    with pytest.raises(ValueError):
        martingale_problem_stats(cfg, BernoulliEnv(p, 0, (0, 1)), TestFunction(0, 3.0), [0.1], p)


def test_structure_helpers():
    x = np.arange(1, 20)
    assert loglog_slope(x, 3 * x ** 0.7) == pytest.approx(0.7)
    v = np.tile(np.arange(50.0), (2, 1))
    np.testing.assert_allclose(spatial_structure(v, np.arange(5), [1, 2, 4]), [1, 4, 16])
