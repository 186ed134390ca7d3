"""Duality function, microscopic Hopf-Cole field and scaled fields.

Fields are indexed by particle label n; the spatial coordinate is
xi = n - mu_hat(t).  Z(t)[n] = lambda_hat(t) rho^n q^{y_n + n}, and Z = 0 for
labels below the leftmost particle.  Values are kept as
``values * exp(log_scale)`` with a per-replica scale so that wide windows
(rho^n spans many decades) neither overflow nor underflow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from hsep.dynamics import ParticleConfig, StepRecord, conditional_move_probs
from hsep.model import ModelParams


def _log_qpow(q: float, e: np.ndarray) -> np.ndarray:
    """log(q ** e) elementwise, with the q = 0 convention 0 ** 0 = 1."""
    e = np.asarray(e, dtype=float)
    if q == 0.0:
        return np.where(e == 0, 0.0, -np.inf)
    return e * math.log(q)


def q_duality(cfg: ParticleConfig, n: int, p: ModelParams) -> np.ndarray:
    """Q_n = q^{y_n + n} per replica; 0 for n < m (the particle sits at +infinity)."""
    j = n - cfg.m
    if np.any(j >= cfg.n_particles):
        raise IndexError(f"label {n} beyond the stored configuration")
    out = np.zeros(cfg.n_replicas)
    live = j >= 0
    rows = np.nonzero(live)[0]
    out[rows] = np.exp(_log_qpow(p.q, cfg.y[rows, j[rows]] + n))
    return out


@dataclass(frozen=True)
class TransformField:
    """Z(t, .) for R replicas over a window of consecutive labels."""

    t: int
    mu_hat: float
    log_lambda_hat: float
    labels: np.ndarray  # (R, N)
    values: np.ndarray  # (R, N), Z = values * exp(log_scale)
    log_scale: np.ndarray  # (R,)

    @property
    def xi(self) -> np.ndarray:
        return self.labels - self.mu_hat

    @property
    def lambda_hat(self) -> float:
        return math.exp(self.log_lambda_hat)

    def log_Z(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values) + self.log_scale[:, None]

    def Z(self) -> np.ndarray:
        """Z in the linear domain (may under/overflow for extreme windows)."""
        return self.values * np.exp(self.log_scale)[:, None]

    def dump_csv(self, replica: int = 0, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "xi", "Z"])
        z = self.Z()[replica]
        for xi, v in zip(self.xi[replica], z):
            w.writerow([self.t, repr(float(xi)), repr(float(v))])
        return buf.getvalue()


def log_Z_of(y: np.ndarray, m: np.ndarray, t: int, p: ModelParams) -> np.ndarray:
    """log Z(t)[n] for every stored label of a batched configuration."""
    c = p.constants
    labels = m[:, None] + np.arange(y.shape[1])
    return c.log_lambda_hat(t) + labels * math.log(p.rho) + _log_qpow(p.q, y + labels)


def build_Z(cfg: ParticleConfig, t: int, p: ModelParams, window: tuple[int, int] | None = None,
            rebase: bool = True) -> TransformField:
    """Z(t) on the label window [lo, hi) (column indices; default all stored labels).

    With ``rebase`` the per-replica maximum of log Z is factored out.
    """
    lo, hi = window if window is not None else (0, cfg.n_particles)
    c = p.constants
    logz = log_Z_of(cfg.y, cfg.m, t, p)[:, lo:hi]
    scale = np.max(logz, axis=1) if rebase else np.zeros(cfg.n_replicas)
    scale = np.where(np.isfinite(scale), scale, 0.0)
    vals = np.exp(logz - scale[:, None])
    labels = cfg.labels()[:, lo:hi]
    return TransformField(int(t), c.mu_hat(t), c.log_lambda_hat(t), labels, vals, scale)


def noise_increment(cfg: ParticleConfig, rec: StepRecord, p: ModelParams) -> np.ndarray:
    """W(s)[n] = lambda(s)(q-1)(K_n(s) - E[K_n(s) | F(s)]), shape (R, N)."""
    P = conditional_move_probs(cfg, rec.s, p)
    lam = p.constants.lambda_at(rec.s)
    return lam * (p.q - 1) * (rec.K - P)


# ---------------------------------------------------------------- initial data

def make_step_ic(n_particles: int, replicas: int = 1) -> ParticleConfig:
    """y_n = -n for n = 0..n_particles-1, nothing to the left (m = 0)."""
    y = -np.arange(n_particles, dtype=np.int64)
    return ParticleConfig(np.zeros(replicas, dtype=np.int64), np.tile(y, (replicas, 1)))


def near_eq_gap_law(p: ModelParams, kappa0: float = 1.0) -> tuple[float, float]:
    """(mean, variance) of the i.i.d. gaps: mean log(1/rho)/eps, variance kappa0/(eps r*).

    This makes log Z(0, .) a random walk whose scaled limit is sqrt(kappa0) times
    a two-sided Brownian motion in r.
    """
    eps = p.eps
    return math.log(1 / p.rho) / eps, kappa0 / (eps * p.constants.r_star)


def sample_gaps(rng: np.random.Generator, size, mean: float, var: float) -> np.ndarray:
    """Integer gaps with the given mean and variance.

    Negative binomial when var > mean (its variance is var exactly); otherwise
    randomized rounding of a normal variate, floor(X + U), which keeps the mean
    and adds 1/6 to the variance on average.
    """
    if var > mean:
        n = mean * mean / (var - mean)
        return rng.negative_binomial(n, mean / var, size=size).astype(np.int64)
    x = rng.normal(mean, math.sqrt(max(var - 1 / 6, 0.0)), size=size) + rng.random(size)
    return np.maximum(np.floor(x), 0).astype(np.int64)


def make_near_equilibrium_ic(width: int, seed: int, p: ModelParams, left_buffer: int = 0,
                             kappa0: float = 1.0, replicas: int = 1,
                             replica_start: int = 0) -> ParticleConfig:
    """Labels -left_buffer..width-1 with y_0 = 0 and i.i.d. gaps (see near_eq_gap_law).

    Each replica draws from its own stream keyed by (seed, replica index).
    """
    if width <= 0:
        raise ValueError("width must be > 0")
    mean, var = near_eq_gap_law(p, kappa0)
    N = left_buffer + width
    ys = np.empty((replicas, N), dtype=np.int64)
    for i in range(replicas):
        rng = np.random.default_rng([int(seed), replica_start + i, 0x4E45])
        g = sample_gaps(rng, N - 1, mean, var)
        y = np.zeros(N, dtype=np.int64)
        y[1:] = -np.cumsum(g + 1)
        ys[i] = y - y[left_buffer]
    return ParticleConfig(np.full(replicas, -left_buffer, dtype=np.int64), ys)


def step_mass_factor(p: ModelParams) -> float:
    """Prefactor r* eps^-1 (1 - rho) turning Z into Z-tilde for the step initial condition."""
    return p.constants.r_star / p.eps * (1 - p.rho)


# ---------------------------------------------------------------- scaled fields

@dataclass(frozen=True)
class ScaledField:
    """Z_eps(tau, r) on a (tau, r) grid for R replicas; H = log Z_eps."""

    epsilon: float
    taus: np.ndarray
    rs: np.ndarray
    H: np.ndarray  # (R, len(taus), len(rs))
    t_real: np.ndarray  # microscopic times
    prefactor: float = 1.0

    @property
    def Z(self) -> np.ndarray:
        return np.exp(self.H)

    def dump_csv(self, replica: int = 0, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "r", "Z_eps", "H_eps"])
        for i, tau in enumerate(self.taus):
            for j, r in enumerate(self.rs):
                h = float(self.H[replica, i, j])
                w.writerow([repr(float(tau)), repr(float(r)), repr(math.exp(h)), repr(h)])
        return buf.getvalue()


def interp_xi(logz: np.ndarray, m: np.ndarray, mu_hat: float, xi: np.ndarray) -> np.ndarray:
    """Linear interpolation in xi of Z(t, .) given log Z on stored labels; returns log values.

    Interpolation is done on Z itself (not log Z), in a rebased linear domain.
    """
    xi = np.asarray(xi, dtype=float)
    pos = xi + mu_hat - m[:, None]  # fractional column index
    j0 = np.floor(pos).astype(np.int64)
    frac = pos - j0
    N = logz.shape[1]
    if np.any(j0 < -1) or np.any(j0 + 1 > N - 1):
        raise IndexError("requested r outside the simulated label window")
    rows = np.arange(logz.shape[0])[:, None]
    left = np.where(j0 >= 0, logz[rows, np.clip(j0, 0, N - 1)], -np.inf)
    right = logz[rows, np.clip(j0 + 1, 0, N - 1)]
    return _log_lerp(left, right, frac)


def _log_lerp(la: np.ndarray, lb: np.ndarray, w: np.ndarray) -> np.ndarray:
    """log((1-w) e^la + w e^lb) without overflow."""
    hi = np.maximum(la, lb)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        return hi + np.log((1 - w) * np.exp(la - hi) + w * np.exp(lb - hi))


class FieldRecorder:
    """Observer for run_trajectory that stores log Z at a set of integer times."""

    def __init__(self, p: ModelParams, times):
        self.p = p
        self.times = set(int(t) for t in times)
        self.logz: dict[int, np.ndarray] = {}
        self.m = None

    def record(self, t: int, y: np.ndarray, m: np.ndarray):
        if t in self.times:
            self.logz[t] = log_Z_of(y, m, t, self.p)
            self.m = m

    def __call__(self, s: int, cfg: ParticleConfig, rec: StepRecord):
        self.record(s, cfg.y, cfg.m)
        self.record(s + 1, cfg.y + rec.K, cfg.m)


def scale_times(taus, p: ModelParams) -> tuple[np.ndarray, list[int]]:
    """Microscopic real times t_eps(tau) and the integer times needed to interpolate them."""
    c = p.constants
    t_real = np.array([c.t_of_tau(tau, p.J) for tau in taus])
    need = sorted({int(math.floor(t)) for t in t_real} | {int(math.ceil(t)) for t in t_real})
    return t_real, need


def scale_field(logz_at: dict[int, np.ndarray], m: np.ndarray, p: ModelParams, taus, rs,
                prefactor: float = 1.0) -> ScaledField:
    """Z_eps(tau, r) = prefactor * Z(eps^-3 tau* J tau, eps^-1 r* r).

    ``logz_at`` maps integer times to log Z on stored labels (as recorded by
    FieldRecorder).  Interpolates linearly in xi first, then in t.
    """
    c = p.constants
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    rs = np.atleast_1d(np.asarray(rs, dtype=float))
    xi = rs * c.r_star / p.eps
    t_real, _ = scale_times(taus, p)
    R = next(iter(logz_at.values())).shape[0]
    H = np.empty((R, len(taus), len(rs)))
    for i, t in enumerate(t_real):
        t0 = int(math.floor(t))
        w = t - t0
        if t0 not in logz_at or (w > 0 and t0 + 1 not in logz_at):
            raise IndexError(f"time {t} not covered by the recorded trajectory")
        h0 = interp_xi(logz_at[t0], m, c.mu_hat(t0), np.broadcast_to(xi, (R, len(xi))))
        if w > 0:
            h1 = interp_xi(logz_at[t0 + 1], m, c.mu_hat(t0 + 1), np.broadcast_to(xi, (R, len(xi))))
            h0 = _log_lerp(h0, h1, w)
        H[:, i] = h0 + math.log(prefactor)
    return ScaledField(p.eps, taus, rs, H, t_real, prefactor)


def height_reading(cfg: ParticleConfig, s: int, p: ModelParams, rs) -> dict:
    """H^J_eps(tau, r) read from x(t) = y(J t) at y-step s = J t.

    Uses H^J(tau, r) = H(J tau, r) = log Z_eps(J tau, r) with J tau = s / (eps^-3 tau* J).
    """
    if s % p.J:
        raise ValueError("height_reading needs s to be a multiple of J")
    c = p.constants
    tau_h = s / c.t_of_tau(1.0, p.J)  # argument of H_eps
    logz = log_Z_of(cfg.y, cfg.m, s, p)
    xi = np.atleast_1d(np.asarray(rs, dtype=float)) * c.r_star / p.eps
    H = interp_xi(logz, cfg.m, c.mu_hat(s), np.broadcast_to(xi, (cfg.n_replicas, len(xi))))
    return {"tau": tau_h / p.J, "tau_H": tau_h, "r": np.asarray(rs, dtype=float), "H": H,
            "H_tilde": H + math.log(step_mass_factor(p))}
