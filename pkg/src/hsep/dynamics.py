"""Particle configurations and the sequential / parallel update rules.

Configurations are batched: ``y`` has shape (R, N) holding labels
m, m+1, ..., m+N-1 of R independent replicas, with y strictly decreasing
along each row.  Labels below m are imaginary particles at +infinity.
Particle n only depends on labels <= n, so truncating on the right is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from hsep.env import BernoulliEnv
from hsep.model import INF_GAP, ModelParams, jump_probs, qpow


@dataclass
class ParticleConfig:
    m: np.ndarray  # (R,) leftmost finite label per replica
    y: np.ndarray  # (R, N) positions, strictly decreasing along axis 1

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        if y.ndim == 1:
            y = y[None, :]
        self.y = y
        self.m = np.broadcast_to(np.asarray(self.m, dtype=np.int64), (y.shape[0],)).copy()

    @classmethod
    def single(cls, m: int, positions: Sequence[int]) -> ParticleConfig:
        return cls(np.array([m]), np.asarray(positions, dtype=np.int64)[None, :])

    @classmethod
    def stack(cls, configs: Sequence[ParticleConfig]) -> ParticleConfig:
        return cls(np.concatenate([c.m for c in configs]), np.concatenate([c.y for c in configs]))

    @property
    def n_replicas(self) -> int:
        return self.y.shape[0]

    @property
    def n_particles(self) -> int:
        return self.y.shape[1]

    def labels(self) -> np.ndarray:
        return self.m[:, None] + np.arange(self.n_particles)

    def gaps(self) -> np.ndarray:
        return gaps_of(self.y)

    def is_valid(self) -> bool:
        return bool(np.all(np.diff(self.y, axis=1) < 0))

    def copy(self) -> ParticleConfig:
        return ParticleConfig(self.m.copy(), self.y.copy())

    def row(self, i: int) -> ParticleConfig:
        return ParticleConfig(self.m[i:i + 1], self.y[i:i + 1])


def gaps_of(y: np.ndarray) -> np.ndarray:
    """g_n = y_{n-1} - y_n - 1 as float, with g_m = inf."""
    g = np.empty(y.shape, dtype=float)
    g[:, 0] = INF_GAP
    g[:, 1:] = y[:, :-1] - y[:, 1:] - 1
    return g


@dataclass
class StepRecord:
    s: int
    K: np.ndarray  # (R, N) move indicators
    B: np.ndarray | None = None
    Bp: np.ndarray | None = None

    def dump(self) -> str:
        return "\n".join("".join(map(str, row)) for row in self.K.astype(int))


def linear_scan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x_n = a_n x_{n-1} + b_n along the last axis, x_{-1} = 0.

    Log-depth doubling scan, exact for integer inputs.
    """
    A = np.array(a, copy=True)
    X = np.array(b, copy=True)
    n = X.shape[-1]
    k = 1
    while k < n:
        X[..., k:] = X[..., k:] + A[..., k:] * X[..., :-k]
        A[..., k:] = A[..., k:] * A[..., :-k]
        k *= 2
    return X


def _draws(cfg: ParticleConfig, s: int, env: BernoulliEnv):
    if env.n_replicas != cfg.n_replicas:
        raise ValueError("environment and configuration replica counts differ")
    g = cfg.gaps()
    labels = cfg.labels()
    return env.draw_pair(s, labels, g)


def parallel_step(cfg: ParticleConfig, s: int, env: BernoulliEnv) -> tuple[ParticleConfig, StepRecord]:
    """y <- y + K(s, g(y)) with K_n = sum_m prod (B' - B) B_m, anchored at the leftmost label."""
    B, Bp = _draws(cfg, s, env)
    D = (Bp - B).astype(np.int64)
    D[:, 0] = 0  # K_m = B_m(s, inf)
    K = linear_scan(D, B.astype(np.int64)).astype(np.int8)
    return ParticleConfig(cfg.m, cfg.y + K), StepRecord(s, K, B, Bp)


def sequential_step(cfg: ParticleConfig, s: int, env: BernoulliEnv) -> ParticleConfig:
    """Left-to-right update: B' if the left neighbour just moved, B otherwise."""
    B, Bp = _draws(cfg, s, env)
    y_old = cfg.y
    y_new = y_old.copy()
    y_new[:, 0] += B[:, 0]
    for n in range(1, cfg.n_particles):
        moved_left = y_new[:, n - 1] > y_old[:, n - 1]
        y_new[:, n] += np.where(moved_left, Bp[:, n], B[:, n])
    return ParticleConfig(cfg.m, y_new)


def conditional_move_probs(cfg: ParticleConfig, s: int, p: ModelParams) -> np.ndarray:
    """E[K_n | F(s)] for every label, via E K_n = P(B_n) + c q^{g_n} E K_{n-1}."""
    g = cfg.gaps()
    pB, pBp = jump_probs(s, g, p)
    return linear_scan(pBp - pB, pB)


def conditional_move_prob(cfg: ParticleConfig, s: int, n: int, p: ModelParams) -> np.ndarray:
    """E[K_n | F(s)] for label n as the explicit finite series over m' = m..n (per replica).

    Zero left of the leftmost label, nan right of the stored row.
    """
    al = p.alpha_at(s)
    c = (p.nu + al) / (1 + al)
    out = np.zeros(cfg.n_replicas)
    g = cfg.gaps()
    for r in range(cfg.n_replicas):
        j = int(n - cfg.m[r])
        if j < 0:
            continue
        if j >= cfg.n_particles:
            out[r] = np.nan  # label not stored
            continue
        total = 0.0
        prod = 1.0
        for k in range(j, -1, -1):  # m' = label of column k
            total += prod * al / (1 + al) * (1 - float(qpow(p.q, g[r, k])))
            prod *= c * float(qpow(p.q, g[r, k]))
            if prod == 0.0:
                break
        out[r] = total
    return out


Observer = Callable[[int, ParticleConfig, StepRecord], None]


@dataclass
class Trajectory:
    J: int
    m: np.ndarray
    ys: list[np.ndarray] = field(default_factory=list)  # y(s), s = 0..t_end
    records: list[StepRecord] = field(default_factory=list)

    @property
    def t_end(self) -> int:
        return len(self.ys) - 1

    def y(self, s: int) -> ParticleConfig:
        return ParticleConfig(self.m, self.ys[s])

    def x(self, t: int) -> ParticleConfig:
        return self.y(self.J * t)

    def dump(self, replica: int = 0) -> str:
        return "\n".join(f"{s} " + " ".join(map(str, y[replica])) for s, y in enumerate(self.ys))


def run_trajectory(
    cfg0: ParticleConfig,
    t_end: int,
    env: BernoulliEnv,
    observers: Iterable[Observer] = (),
    store: bool = True,
    keep_records: bool = False,
    t_start: int = 0,
) -> Trajectory | ParticleConfig:
    """Apply parallel_step for s = t_start .. t_start+t_end-1.

    Returns a Trajectory when ``store`` is set, otherwise the final configuration.
    """
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    observers = list(observers)
    traj = Trajectory(env.params.J, cfg0.m.copy(), [cfg0.y.copy()])
    cfg = cfg0
    for s in range(t_start, t_start + t_end):
        new, rec = parallel_step(cfg, s, env)
        for obs in observers:
            obs(s, cfg, rec)
        if store:
            traj.ys.append(new.y)
            if keep_records:
                traj.records.append(rec)
        cfg = new
    return traj if store else cfg
