import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsep.dynamics import (ParticleConfig, conditional_move_prob, conditional_move_probs, gaps_of, linear_scan,
                           parallel_step, run_trajectory, sequential_step)
from hsep.env import BernoulliEnv
from hsep.model import ModelParams
from hsep.transform import make_step_ic

P = ModelParams(q=0.5, nu=0.25, alpha=1.0, J=1, rho=0.5)


def random_cfg(rng, R, N, mean_gap=2.0):
    gaps = rng.geometric(1 / (1 + mean_gap), size=(R, N)) - 1
    y = -np.cumsum(gaps + 1, axis=1)
    return ParticleConfig(rng.integers(-3, 4, size=R), y)


def test_gap_convention():
    cfg = ParticleConfig.single(0, [5, 3, 2, -4])
    assert gaps_of(cfg.y).tolist() == [[np.inf, 1, 0, 5]]


def test_single_particle_rate():
    R = 10 ** 6
    env = BernoulliEnv(P, seed=1, replicas=tuple(range(R)))
    cfg = ParticleConfig(np.zeros(R), np.zeros((R, 1), dtype=np.int64))
    moved = (sequential_step(cfg, 0, env).y[:, 0] - cfg.y[:, 0]).mean()
    sd = np.sqrt(0.25 / R)
    assert abs(moved - 0.5) < 4 * sd


def test_blocked_particle_needs_its_neighbour():
    R = 20000
    env = BernoulliEnv(P, seed=2, replicas=tuple(range(R)))
    cfg = ParticleConfig(np.zeros(R), np.tile([1, 0], (R, 1)))
    new = sequential_step(cfg, 0, env)
    left_still = new.y[:, 0] == 1
    assert left_still.any()
    assert np.all(new.y[left_still, 1] == 0)


def test_step_ic_sequential_equals_parallel():
    env = BernoulliEnv(P, seed=7, replicas=tuple(range(50)))
    a = b = make_step_ic(30, 50)
    for s in range(5):
        a, _ = parallel_step(a, s, env)
        b = sequential_step(b, s, env)
        assert np.array_equal(a.y, b.y)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32), N=st.integers(1, 50), q=st.floats(0.0, 0.95),
       nu=st.floats(0.0, 0.95), alpha=st.floats(0.05, 10.0), J=st.integers(1, 3))
def test_coupling_random(seed, N, q, nu, alpha, J):
    p = ModelParams(q=q, nu=nu, alpha=alpha, J=J)
    rng = np.random.default_rng(seed)
    cfg = random_cfg(rng, 8, N, mean_gap=float(rng.uniform(0.1, 4)))
    env = BernoulliEnv(p, seed=seed, replicas=tuple(range(8)))
    a = b = cfg
    for s in range(10):
        a, _ = parallel_step(a, s, env)
        b = sequential_step(b, s, env)
        assert np.array_equal(a.y, b.y)


def test_packed_block_moves_as_product_of_b_prime():
    env = BernoulliEnv(P, seed=4, replicas=tuple(range(200)))
    cfg = make_step_ic(25, 200)
    _, rec = parallel_step(cfg, 0, env)
    assert np.array_equal(rec.K[:, 0], rec.B[:, 0])
    for n in range(1, 25):
        assert np.array_equal(rec.K[:, n], rec.K[:, n - 1] * rec.Bp[:, n])


def test_k_recursion_on_random_configs():
    rng = np.random.default_rng(5)
    cfg = random_cfg(rng, 300, 40)
    env = BernoulliEnv(P, seed=5, replicas=tuple(range(300)))
    new, rec = parallel_step(cfg, 3, env)
    K, B, Bp = rec.K.astype(int), rec.B.astype(int), rec.Bp.astype(int)
    assert set(np.unique(K)) <= {0, 1}
    for n in range(1, 40):
        assert np.array_equal(K[:, n], B[:, n] + (Bp[:, n] - B[:, n]) * K[:, n - 1])
    assert new.is_valid()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-5, 5)), min_size=1, max_size=70))
def test_linear_scan_matches_loop(pairs):
    a = np.array([[p[0] for p in pairs]])
    b = np.array([[p[1] for p in pairs]])
    x, out = 0, []
    for ai, bi in pairs:
        x = ai * x + bi
        out.append(x)
    assert linear_scan(a, b)[0].tolist() == out


def test_conditional_prob_leftmost_and_isolated():
    cfg = ParticleConfig.single(2, [10000, 5000, 0])  # q^g underflows to 0
    P_scan = conditional_move_probs(cfg, 0, P)[0]
    assert np.allclose(P_scan, 0.5, rtol=0, atol=1e-15)
    assert conditional_move_prob(cfg, 0, 2, P)[0] == pytest.approx(0.5)


def test_conditional_prob_series_equals_scan():
    rng = np.random.default_rng(8)
    p = ModelParams(q=0.7, nu=0.4, alpha=2.0, J=2)
    cfg = random_cfg(rng, 5, 30, mean_gap=1.0)
    scan = conditional_move_probs(cfg, 1, p)
    for n in range(30):
        series = conditional_move_prob(cfg, 1, int(cfg.m[0]) + n, p)
        assert series[0] == pytest.approx(scan[0, n], abs=1e-14)


def test_conditional_prob_against_monte_carlo():
    cfg0 = ParticleConfig.single(0, [0, -1, -3, -4, -8])
    R = 10 ** 6
    env = BernoulliEnv(P, seed=13, replicas=tuple(range(R)))
    cfg = ParticleConfig(np.zeros(R), np.tile(cfg0.y, (R, 1)))
    _, rec = parallel_step(cfg, 0, env)
    freq = rec.K.mean(axis=0)
    exact = conditional_move_probs(cfg0, 0, P)[0]
    sd = np.sqrt(exact * (1 - exact) / R)
    assert np.all(np.abs(freq - exact) < 4 * sd + 1e-12)


def test_run_trajectory_basics():
    p = ModelParams.scaling(0.3, J=2)
    env = BernoulliEnv(p, seed=1, replicas=(0, 1))
    cfg = make_step_ic(10, 2)
    traj = run_trajectory(cfg, 0, env)
    assert traj.t_end == 0 and np.array_equal(traj.ys[0], cfg.y)
    traj = run_trajectory(cfg, 6, env)
    assert np.array_equal(traj.x(1).y, traj.y(2).y)
    with pytest.raises(ValueError):
        run_trajectory(cfg, -1, env)


def test_exclusion_over_many_steps():
    p = ModelParams.scaling(0.4)
    rng = np.random.default_rng(0)
    cfg = random_cfg(rng, 1000, 30, mean_gap=0.5)
    env = BernoulliEnv(p, seed=0, replicas=tuple(range(1000)))
    seen = []
    run_trajectory(cfg, 100, env, observers=[lambda s, c, rec: seen.append(c.is_valid())], store=False)
    assert len(seen) == 100 and all(seen)
