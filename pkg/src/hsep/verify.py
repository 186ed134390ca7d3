"""Exact and statistical checks of the discrete SHE, duality and martingale identities."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from hsep.dynamics import ParticleConfig, Trajectory, conditional_move_probs
from hsep.kernels import base_kernel, heat_kernel_family, tilted_kernel
from hsep.model import ModelParams, jump_probs, qpow
from hsep.transform import interp_xi, log_Z_of, noise_increment


def lower_toeplitz_apply(w: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """out[..., n] = sum_{d=0}^{n} w[d] Z[..., n-d] (labels below the row are empty)."""
    N = Z.shape[-1]
    w = np.asarray(w)[:N]
    if len(w) < N:
        w = np.concatenate([w, np.zeros(N - len(w))])
    T = toeplitz(w, np.zeros(N))
    return Z @ T.T


def trust_margin(p: ModelParams, tol: float = 1e-12) -> int:
    """Labels after which the leftmost anchor influences K_n with probability < tol.

    Each factor |B' - B| has mean at most 1 - (1-nu)/(1+alpha)^2.
    """
    al = max(p.alpha_at(s) for s in range(p.J))
    rate = 1 - (1 - p.nu) / (1 + al) ** 2
    return int(math.ceil(math.log(tol) / math.log(rate)))


# ---------------------------------------------------------------- discrete SHE

@dataclass
class DecompositionReport:
    t1: int
    t2: int
    window: tuple[int, int]
    max_residual: float  # relative to the magnitude of the terms
    max_abs_residual: float
    drift_term: np.ndarray = field(repr=False)
    martingale_term: np.ndarray = field(repr=False)
    tail_bound_used: float = 0.0
    in_trust_region: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("drift_term")
        d.pop("martingale_term")
        d["window"] = list(self.window)
        return d


def check_decomposition(traj: Trajectory, t1: int, t2: int, p: ModelParams,
                        window: tuple[int, int] | None = None) -> DecompositionReport:
    """Compare Z(t2) with p(t2,t1) * Z(t1) + sum_s p(t2,s+1) * (Z(s) W(s)).

    ``traj`` must be stored with records (keep_records=True) from step 0.
    ``window`` is a column range [lo, hi) of stored labels.  Kernels are cut at
    the row length, which is exact because Z vanishes below the leftmost label.
    """
    if not 0 <= t1 <= t2 <= traj.t_end:
        raise ValueError("need 0 <= t1 <= t2 <= t_end")
    m = traj.m
    N = traj.ys[0].shape[1]
    lo, hi = window if window is not None else (0, N)
    logs = [log_Z_of(traj.ys[s], m, s, p) for s in range(t1, t2 + 1)]
    shift = logs[0].max(axis=1, keepdims=True)
    Zs = [np.exp(lz - shift) for lz in logs]
    fam = heat_kernel_family(t2, t1, p, N)
    drift = lower_toeplitz_apply(fam[t1], Zs[0])
    scale = drift.copy()
    mg = np.zeros_like(drift)
    for s in range(t1, t2):
        W = noise_increment(traj.y(s), traj.records[s], p)
        ZW = Zs[s - t1] * W
        mg += lower_toeplitz_apply(fam[s + 1], ZW)
        scale += lower_toeplitz_apply(fam[s + 1], np.abs(ZW))
    res = Zs[-1] - drift - mg
    win = slice(lo, hi)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale[:, win] > 0, np.abs(res[:, win]) / scale[:, win], np.abs(res[:, win]))
    abs_res = np.abs(res[:, win]) * np.exp(shift)
    return DecompositionReport(
        t1, t2, (lo, hi), float(rel.max()), float(abs_res.max()),
        drift[:, win] * np.exp(shift), mg[:, win] * np.exp(shift), 0.0,
        bool(lo >= trust_margin(p) or np.all(m == m[0])),
    )


# ---------------------------------------------------------------- duality

def series_move_probs(g: np.ndarray, s: int, p: ModelParams) -> np.ndarray:
    """E[K_n | F] for one configuration as the literal finite series (gaps g, g[0] = inf)."""
    al = p.alpha_at(s)
    c = (p.nu + al) / (1 + al)
    qg = qpow(p.q, g)
    head = al / (1 + al) * (1 - qg)
    ratio = c * qg
    N = len(g)
    out = np.empty(N)
    for j in range(N):
        # weights prod_{i=k+1}^{j} ratio_i for k = j, j-1, ..., 0
        w = np.concatenate([[1.0], np.cumprod(ratio[j:0:-1])])
        out[j] = np.dot(w, head[j::-1])
    return out


@dataclass
class IdentityReport:
    name: str
    max_discrepancy: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tol

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def duality_sides(cfg: ParticleConfig, s: int, p: ModelParams, replica: int = 0):
    """Both sides of E[Q_n(s+1) | F(s)] = sum_k p'(n-k) Q_k(s), per stored label.

    Left: two-outcome average with the series move probability.  Right: base
    kernel convolution.  Both are divided by Q_n so they are O(1).
    """
    y = cfg.y[replica]
    labels = cfg.labels()[replica]
    g = cfg.gaps()[replica]
    P = series_move_probs(g, s, p)
    left = (1 - P) + P * p.q  # E[q^{K_n}]
    # Q_k / Q_n = q^{(y_k + k) - (y_n + n)} for k <= n
    e = y + labels
    N = len(y)
    k = base_kernel(s, p, length=N)
    right = np.empty(N)
    for n in range(N):
        right[n] = np.dot(k.weights[: n + 1], qpow(p.q, e[n::-1] - e[n]))
    return left, right


def check_duality_evolution(cfg: ParticleConfig, s: int, p: ModelParams, tol: float = 1e-12) -> IdentityReport:
    worst, count = 0.0, 0
    for r in range(cfg.n_replicas):
        left, right = duality_sides(cfg, s, p, r)
        worst = max(worst, float(np.max(np.abs(left - right))))
        count += len(left)
    return IdentityReport("duality", worst, count, tol)


# ---------------------------------------------------------------- covariance

def exact_covariance(cfg: ParticleConfig, s: int, j1: int, j2: int, p: ModelParams, replica: int = 0) -> float:
    """Cov(K_{j1}, K_{j2} | F(s)) from the Markov chain of K along the labels (columns j)."""
    if j1 > j2:
        j1, j2 = j2, j1
    g = cfg.gaps()[replica]
    pB, pBp = jump_probs(s, g, p)
    pB, pBp = np.atleast_1d(pB), np.atleast_1d(pBp)
    # forward chain from the anchor: P(K_j = 1)
    P = np.empty(j2 + 1)
    P[0] = pB[0]
    for j in range(1, j2 + 1):
        P[j] = P[j - 1] * pBp[j] + (1 - P[j - 1]) * pB[j]
    # chain restarted from K_{j1} = 1
    pi = 1.0
    for j in range(j1 + 1, j2 + 1):
        pi = pi * pBp[j] + (1 - pi) * pB[j]
    return P[j1] * (pi - P[j2])


def covariance_sides(cfg: ParticleConfig, s: int, j1: int, j2: int, p: ModelParams, replica: int = 0):
    """Both sides of Z Z E[W W | F] = (c rho)^{|dn|} Lambda1 Lambda2, divided by Z(j1) Z(j2)."""
    lam = p.constants.lambda_at(s)
    left = lam ** 2 * (1 - p.q) ** 2 * exact_covariance(cfg, s, j1, j2, p, replica)
    lo, hi = min(j1, j2), max(j1, j2)
    logz = log_Z_of(cfg.y[replica:replica + 1], cfg.m[replica:replica + 1], s, p)[0]
    zr = np.exp(logz[: lo + 1] - logz[lo])  # Z(k)/Z(lo), k <= lo
    k = tilted_kernel(s, p, length=lo + 1)
    PZ = float(np.dot(k.weights, zr[::-1]))  # (p * Z)(lo) / Z(lo)
    L1 = p.q * lam - PZ
    L2 = PZ - lam
    al = p.alpha_at(s)
    ratio = (p.nu + al) * p.rho / (1 + al)
    right = ratio ** (hi - lo) * L1 * L2 * math.exp(2 * logz[lo] - logz[lo] - logz[hi])
    return left, right


def covariance_band(cfg: ParticleConfig, s: int, p: ModelParams, max_sep: int, replica: int = 0):
    """Both covariance sides for all column pairs (j, j + d), d = 0..max_sep, as (N, max_sep+1) arrays.

    Same quantities as covariance_sides, vectorized over the left column.
    Entries with j + d beyond the row are nan.
    """
    lam = p.constants.lambda_at(s)
    g = cfg.gaps()[replica]
    N = len(g)
    pB, pBp = jump_probs(s, g, p)
    P = np.empty(N)
    P[0] = pB[0]
    for j in range(1, N):
        P[j] = P[j - 1] * pBp[j] + (1 - P[j - 1]) * pB[j]
    logz = log_Z_of(cfg.y[replica:replica + 1], cfg.m[replica:replica + 1], s, p)[0]
    zr = np.exp(logz - logz.max())
    k = tilted_kernel(s, p, length=N)
    PZ = lower_toeplitz_apply(k.weights, zr[None, :])[0] / zr
    L1 = p.q * lam - PZ
    L2 = PZ - lam
    al = p.alpha_at(s)
    ratio = (p.nu + al) * p.rho / (1 + al)
    left = np.full((N, max_sep + 1), np.nan)
    right = np.full((N, max_sep + 1), np.nan)
    pi = np.ones(N)
    for d in range(max_sep + 1):
        n = N - d
        if n <= 0:
            break
        if d > 0:
            pi = pi[:n] * pBp[d:] + (1 - pi[:n]) * pB[d:]
        j = np.arange(n)
        left[:n, d] = lam ** 2 * (1 - p.q) ** 2 * P[:n] * (pi[:n] - P[d:])
        right[:n, d] = ratio ** d * L1[:n] * L2[:n] * np.exp(logz[j] - logz[j + d])
    return left, right


def check_conditional_covariance(cfg: ParticleConfig, s: int, p: ModelParams, max_sep: int = 10,
                                 tol: float = 1e-12) -> IdentityReport:
    """All label pairs with |n1 - n2| <= max_sep, every replica."""
    worst, count = 0.0, 0
    for r in range(cfg.n_replicas):
        left, right = covariance_band(cfg, s, p, max_sep, r)
        ok = ~np.isnan(left)
        worst = max(worst, float(np.max(np.abs(left[ok] - right[ok]))))
        count += int(ok.sum())
    return IdentityReport("covariance", worst, count, tol)


def qv_ratio(cfg: ParticleConfig, s: int, p: ModelParams) -> np.ndarray:
    """Lambda1 Lambda2 / (eps^2 Z^2) at every stored label, shape (R, N).

    Lambda1 Lambda2 / Z^2 = lambda^2 (1-q)^2 P (1-P) with P = E[K_n | F].
    """
    P = conditional_move_probs(cfg, s, p)
    lam = p.constants.lambda_at(s)
    return lam ** 2 * (1 - p.q) ** 2 * P * (1 - P) / p.eps ** 2


def qv_prefactor(p: ModelParams) -> float:
    ag = p.alpha * p.constants.gamma
    return ag / (1 + ag) ** 2


def check_qv_approx(cfg: ParticleConfig, s: int, p: ModelParams, cols=None) -> dict:
    """Exact quadratic variation against its leading eps^2 form on the given columns.

    Returns the mean ratio (the fitted prefactor), the mean absolute relative error,
    and the Lambda1/Lambda2 leading-order ratios.
    """
    ratio = qv_ratio(cfg, s, p)
    P = conditional_move_probs(cfg, s, p)
    if cols is not None:
        ratio, P = ratio[:, cols], P[:, cols]
    target = qv_prefactor(p)
    lam = p.constants.lambda_at(s)
    ag = p.alpha * p.constants.gamma
    # Lambda1 / Z = lambda (q-1)(1-P), Lambda2 / Z = -lambda (1-q) P
    l1 = lam * (p.q - 1) * (1 - P) / (-p.eps / (1 + ag))
    l2 = -lam * (1 - p.q) * P / (-p.eps * ag / (1 + ag))
    return {
        "epsilon": p.eps,
        "target": target,
        "fitted_prefactor": float(ratio.mean()),
        "prefactor_rel_error": float(abs(ratio.mean() - target) / target),
        "mean_abs_rel_error": float(np.mean(np.abs(ratio - target)) / target),
        "lambda1_ratio": float(l1.mean()),
        "lambda2_ratio": float(l2.mean()),
    }


def write_json(path, report: dict) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ---------------------------------------------------------------- martingale problem

@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C^2 test function with exact derivatives.

    shape 'bump3' / 'bump4': (1 - u^2)^k on |u| < 1, u = (x - center)/width.
    shape 'plateau': 1 on |u| <= 1/2, quintic smoothstep down to 0 at |u| = 1.
    """

    __test__ = False  # not a pytest class

    center: float = 0.0
    width: float = 1.0
    shape: str = "bump4"

    def __post_init__(self):
        if self.shape not in ("bump3", "bump4", "plateau"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not self.width > 0:
            raise ValueError("width must be > 0")

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def _u(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.width

    def __call__(self, x):
        return self.derivative(x, 0)

    def derivative(self, x, order: int = 0):
        u = self._u(x)
        a = np.abs(u)
        inside = a < 1
        out = np.zeros_like(u)
        if self.shape.startswith("bump"):
            k = int(self.shape[-1])
            v = np.where(inside, 1 - u * u, 0.0)
            if order == 0:
                out = v ** k
            elif order == 1:
                out = -2 * k * u * v ** (k - 1)
            else:
                out = -2 * k * v ** (k - 1) + 4 * k * (k - 1) * u * u * v ** (k - 2)
        else:
            # s(v) = 1 - (6v^5 - 15v^4 + 10v^3), v = 2|u| - 1 in [0, 1]
            v = np.clip(2 * a - 1, 0.0, 1.0)
            ramp = (a > 0.5) & inside
            if order == 0:
                out = np.where(a <= 0.5, 1.0, 1 - (6 * v ** 5 - 15 * v ** 4 + 10 * v ** 3))
            elif order == 1:
                out = np.where(ramp, -np.sign(u) * 2 * 30 * v * v * (v - 1) ** 2, 0.0)
            else:
                out = np.where(ramp, -4 * 60 * v * (v - 1) * (2 * v - 1), 0.0)
        out = np.where(inside, out, 0.0)
        return out / self.width ** order


def bonferroni_z(n_tests: int, alpha: float = 1e-3, floor: float = 4.0) -> float:
    """Two-sided threshold: at least 4 sigma, more if Bonferroni over n_tests demands it."""
    from scipy.stats import norm
    return max(floor, float(norm.isf(alpha / (2 * max(n_tests, 1)))))


class MartingaleObserver:
    """Accumulates <Z, psi>_eps, the drift sum, N_psi and the conditional variance sum.

    All replicas must share the leftmost label.  Use as a run_trajectory observer;
    values are recorded at the integer times in ``t_grid``.
    """

    def __init__(self, p: ModelParams, psi: TestFunction, t_grid, m: int, n_labels: int):
        self.p, self.psi = p, psi
        self.t_grid = sorted(int(t) for t in t_grid)
        self.m, self.N = int(m), int(n_labels)
        c = p.constants
        self.h = 1.0 / c.t_of_tau(1.0, p.J)  # tau per step
        self.scale = p.eps / c.r_star
        self.kernels = [tilted_kernel(s, p) for s in range(p.J)]
        L = max(len(k.weights) for k in self.kernels)
        # psi must vanish on the last L stored labels at every time, otherwise the
        # drift term would need labels that are not simulated
        hi_label = self.m + self.N - L
        t_max = self.t_grid[-1] if self.t_grid else 0
        for t in (0, t_max + 1):
            if self.psi.support[1] >= self.scale * (hi_label - c.mu_hat(t)):
                raise ValueError("test function support overflows the simulated window")
        self.rows = {k: [] for k in ("pair", "drift", "N_mg", "qv", "drift_cont", "qv_cont")}
        self._acc = None

    def _x(self, labels, t):
        return self.scale * (labels - self.p.constants.mu_hat(t))

    def _pair(self, Z, t):
        labels = self.m + np.arange(self.N)
        return self.scale * Z @ self.psi(self._x(labels, t))

    def start(self, y0: np.ndarray):
        Z0 = np.exp(log_Z_of(y0, np.full(y0.shape[0], self.m), 0, self.p))
        R = y0.shape[0]
        self._acc = {k: np.zeros(R) for k in ("drift", "N_mg", "qv", "drift_cont", "qv_cont")}
        self._pair0 = self._pair(Z0, 0)
        if 0 in self.t_grid:
            self._record(self._pair0)

    def _record(self, pair):
        self.rows["pair"].append(pair.copy())
        for k, v in self._acc.items():
            self.rows[k].append(v.copy())

    def __call__(self, s: int, cfg: ParticleConfig, rec):
        p = self.p
        c = p.constants
        if self._acc is None:
            self.start(cfg.y)
        Z = np.exp(log_Z_of(cfg.y, cfg.m, s, p))
        labels = self.m + np.arange(self.N)
        x0, x1 = self._x(labels, s), self._x(labels, s + 1)
        psi0, psi1 = self.psi(x0), self.psi(x1)
        k = self.kernels[s % p.J]
        L = len(k.weights)
        ext = self.psi(self._x(self.m + np.arange(self.N + L - 1), s + 1))
        G = np.lib.stride_tricks.sliding_window_view(ext, L) @ k.weights  # sum_d h(d) psi1(n + d)
        self._acc["drift"] += self.scale * Z @ (G - psi0)
        W = noise_increment(cfg, rec, p)
        self._acc["N_mg"] += self.scale * (Z * W) @ psi1
        # E[M^2 | F] via the (c rho)^{|n1-n2|} band: sum_n v_n psi_n (psi_n + 2 T_n)
        P = conditional_move_probs(cfg, s, p)
        lam = c.lambda_at(s)
        v = lam ** 2 * (1 - p.q) ** 2 * P * (1 - P) * Z * Z
        al = p.alpha_at(s)
        cr = (p.nu + al) * p.rho / (1 + al)
        T = np.zeros(self.N)
        for n in range(self.N - 2, -1, -1):
            T[n] = cr * (psi1[n + 1] + T[n + 1])
        self._acc["qv"] += self.scale ** 2 * v @ (psi1 * (psi1 + 2 * T))
        # continuum counterparts over one step of length h in tau
        self._acc["drift_cont"] += self.h * 0.5 * self.scale * Z @ self.psi.derivative(x0, 2)
        self._acc["qv_cont"] += self.h * self.scale * (Z * Z) @ (psi0 * psi0)
        if s + 1 in self.t_grid:
            self._record(self._pair(Z * np.exp(np.log(lam) + np.log(p.q) * rec.K), s + 1))

    def result(self) -> dict:
        pair = np.stack(self.rows["pair"], axis=1)
        out = {k: np.stack(v, axis=1) for k, v in self.rows.items() if k != "pair"}
        out["pair"] = pair
        out["N"] = pair - self._pair0[:, None] - out["drift"]
        out["N_hat"] = out["N"] ** 2 - out["qv"]
        out["t"] = np.array(self.t_grid)
        return out


def increment_test(paths: np.ndarray, times, alpha: float = 1e-3) -> dict:
    """Two-sided z-tests that ensemble means of path increments vanish.

    ``paths`` is (R, G) with paths[:, 0] at the first grid time.
    """
    inc = np.diff(paths, axis=1, prepend=0.0) if paths.shape[1] else paths
    R = paths.shape[0]
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / math.sqrt(R)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(se > 0, mean / se, 0.0)
    thr = bonferroni_z(len(z), alpha)
    bad = np.nonzero(np.abs(z) > thr)[0]
    return {
        "threshold": thr,
        "z": z.tolist(),
        "max_abs_z": float(np.max(np.abs(z))) if len(z) else 0.0,
        "passed": len(bad) == 0,
        "first_failure_t": int(np.asarray(times)[bad[0]]) if len(bad) else None,
    }


def martingale_problem_stats(cfg0: ParticleConfig, env, psi: TestFunction, taus, p: ModelParams,
                             t_start: int = 0) -> dict:
    """Run the dynamics and return N_psi / N-hat_psi paths on the tau grid plus their tests.

    The increments are taken between consecutive grid times (the first from time 0).
    """
    from hsep.dynamics import run_trajectory

    if np.any(cfg0.m != cfg0.m[0]):
        raise ValueError("all replicas must share the leftmost label")
    c = p.constants
    t_grid = sorted({int(round(c.t_of_tau(tau, p.J))) for tau in taus})
    obs = MartingaleObserver(p, psi, t_grid, int(cfg0.m[0]), cfg0.n_particles)
    obs.start(cfg0.y)
    run_trajectory(cfg0, t_grid[-1], env, observers=[obs], store=False, t_start=t_start)
    res = obs.result()
    res["identity_residual"] = float(np.max(np.abs(res["N"] - res["N_mg"])) /
                                     max(1e-300, float(np.max(np.abs(res["pair"])))))
    res["test_N"] = increment_test(res["N"], t_grid)
    res["test_N_hat"] = increment_test(res["N_hat"], t_grid)
    res["taus"] = np.array(t_grid) / c.t_of_tau(1.0, p.J)
    return res


# ---------------------------------------------------------------- moment probes

SPATIAL_BRACKET = (0.35, 0.5)
TEMPORAL_BRACKET = (0.15, 0.25)
STEP_NORM_BRACKET = (-0.6, -0.4)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def lattice_time(p: ModelParams) -> float:
    """Steps for the heat kernel to spread over one label, tau* J / (eps r*^2)."""
    c = p.constants
    return c.t_of_tau((p.eps / c.r_star) ** 2, p.J)


def spatial_structure(values: np.ndarray, base: np.ndarray, lags) -> np.ndarray:
    """E|V[n + l] - V[n]|^2 averaged over replicas and base columns n, for each lag l."""
    return np.array([np.mean((values[:, base + l] - values[:, base]) ** 2) for l in lags])


def moment_probe(logz_at: dict[int, np.ndarray], m: np.ndarray, p: ModelParams, t0: int,
                 spatial_lags, temporal_lags, base_xi) -> dict:
    """Second-moment structure functions of Z (and of H = log Z) around time t0.

    Spatial increments use raw labels at t0 (lags in labels).  Temporal increments
    compare Z at fixed xi between t0 and t0 + lag (lags in steps), interpolating
    in xi.  Exponents are half the log-log slopes, so a Hoelder-v field reports v
    in space and v/2 in time.
    """
    c = p.constants
    base_xi = np.asarray(base_xi, dtype=float)
    lz0 = logz_at[t0]
    cols = np.unique(np.round(base_xi + c.mu_hat(t0) - m[0]).astype(np.int64))
    if np.any(m != m[0]):
        raise ValueError("replicas must share the leftmost label")
    if cols.min() < 0 or cols.max() + max(spatial_lags) >= lz0.shape[1]:
        raise IndexError("spatial lags leave the simulated window")
    Z0 = np.exp(lz0)
    S_Z = spatial_structure(Z0, cols, spatial_lags)
    S_H = spatial_structure(lz0, cols, spatial_lags)
    R = lz0.shape[0]
    xi = np.broadcast_to(base_xi, (R, len(base_xi)))
    h0 = interp_xi(lz0, m, c.mu_hat(t0), xi)
    T_Z, T_H = [], []
    for lag in temporal_lags:
        h1 = interp_xi(logz_at[t0 + int(lag)], m, c.mu_hat(t0 + int(lag)), xi)
        T_Z.append(np.mean((np.exp(h1) - np.exp(h0)) ** 2))
        T_H.append(np.mean((h1 - h0) ** 2))
    sx, st = 0.5 * loglog_slope(spatial_lags, S_Z), 0.5 * loglog_slope(temporal_lags, T_Z)
    return {
        "t0": int(t0),
        "spatial_lags": list(map(int, spatial_lags)),
        "temporal_lags": list(map(int, temporal_lags)),
        "spatial_S_Z": S_Z.tolist(), "temporal_S_Z": list(map(float, T_Z)),
        "spatial_exponent": sx, "temporal_exponent": st,
        "spatial_exponent_H": 0.5 * loglog_slope(spatial_lags, S_H),
        "temporal_exponent_H": 0.5 * loglog_slope(temporal_lags, T_H),
        "spatial_ok": bool(SPATIAL_BRACKET[0] <= sx <= SPATIAL_BRACKET[1]),
        "temporal_ok": bool(TEMPORAL_BRACKET[0] <= st <= TEMPORAL_BRACKET[1]),
    }


def _lag_grid(lo: float, decades: float, n: int) -> np.ndarray:
    return np.unique(np.round(lo * np.logspace(0, decades, n)).astype(np.int64))


def near_eq_moment_probe(p: ModelParams, replicas: int, seed: int = 0, tau0: float = 0.25,
                         r_window: float = 1.0, decades: float = 1.5, n_lags: int = 8,
                         kappa0: float = 1.0) -> dict:
    """Simulate a near-equilibrium ensemble and run ``moment_probe`` at tau0.

    Spatial lags run from one label, temporal lags from the lattice time, each
    over ``decades`` decades.
    """
    from hsep.dynamics import run_trajectory
    from hsep.env import BernoulliEnv
    from hsep.transform import FieldRecorder, make_near_equilibrium_ic

    c = p.constants
    per_r = c.r_star / p.eps
    s_lags = _lag_grid(1, decades, n_lags)
    t_lags = _lag_grid(max(1.0, lattice_time(p)), decades, n_lags)
    t0 = int(round(c.t_of_tau(tau0, p.J)))
    t_end = t0 + int(t_lags[-1])
    drift = c.mu_hat(t_end) - c.mu_hat(0)
    left = int(math.ceil(r_window * per_r + 6 * per_r))
    width = int(math.ceil(drift + r_window * per_r + s_lags[-1] + 8))
    cfg = make_near_equilibrium_ic(width, seed, p, left_buffer=left, kappa0=kappa0, replicas=replicas)
    env = BernoulliEnv(p, seed, tuple(range(replicas)))
    rec = FieldRecorder(p, [t0] + [t0 + int(l) for l in t_lags])
    run_trajectory(cfg, t_end, env, observers=[rec], store=False)
    base = np.arange(-math.floor(r_window * per_r), math.floor(r_window * per_r) + 1, dtype=float)
    out = moment_probe(rec.logz, rec.m, p, t0, s_lags, t_lags, base)
    out.update({"epsilon": p.eps, "replicas": replicas, "tau0": tau0, "kappa0": kappa0,
                "lattice_time": lattice_time(p)})
    return out


def step_moment_probe(p: ModelParams, replicas: int, seed: int = 0, window=(10.0, 100.0),
                      n_taus: int = 8) -> dict:
    """Fit the tau-exponent of ||Z-tilde(tau, 0)||_2 for the step initial condition.

    tau runs over ``window`` times the lattice scale (eps / r*)^2, where the
    one-point blowup is visible above the lattice cutoff.
    """
    from hsep.dynamics import run_trajectory
    from hsep.env import BernoulliEnv
    from hsep.she import she_delta_second_moment
    from hsep.transform import (FieldRecorder, make_step_ic, scale_field, scale_times,
                                step_mass_factor)

    c = p.constants
    tau_lat = (p.eps / c.r_star) ** 2
    taus = np.geomspace(window[0] * tau_lat, window[1] * tau_lat, n_taus)
    _, need = scale_times(taus, p)
    T = need[-1]
    cfg = make_step_ic(int(math.ceil(c.mu_hat(T))) + 4, replicas)
    env = BernoulliEnv(p, seed, tuple(range(replicas)))
    rec = FieldRecorder(p, need)
    run_trajectory(cfg, T, env, observers=[rec], store=False)
    sf = scale_field(rec.logz, rec.m, p, taus, [0.0], prefactor=step_mass_factor(p))
    norm2 = np.sqrt(np.mean(sf.Z[:, :, 0] ** 2, axis=0))
    slope = loglog_slope(taus, norm2)
    cont = [math.sqrt(she_delta_second_moment(t)) for t in taus]
    return {
        "epsilon": p.eps, "replicas": replicas, "taus": taus.tolist(), "norm2": norm2.tolist(),
        "exponent": slope, "continuum_exponent": loglog_slope(taus, cont),
        "ok": bool(STEP_NORM_BRACKET[0] <= slope <= STEP_NORM_BRACKET[1]),
    }
