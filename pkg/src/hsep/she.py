"""Reference solver for dZ = (1/2) Z'' dtau + Z dW (space-time white noise) and one-point comparisons."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass
class SHEGrid:
    """Uniform grid on [-half_width, half_width] with explicit time stepping.

    ``boundary`` is 'dirichlet' (zero outside), 'periodic' or 'neumann'.
    """

    dx: float
    dt: float
    half_width: float
    seed: int = 0
    boundary: str = "periodic"
    taus: np.ndarray = field(default=None, repr=False)
    Z: np.ndarray = field(default=None, repr=False)  # (R, len(taus), nx) snapshots

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("dx and dt must be positive")
        if self.dt > self.dx ** 2 / 2 * (1 + 1e-12):
            raise ValueError(f"unstable grid: dt={self.dt} > dx^2/2={self.dx ** 2 / 2}")
        if self.boundary not in ("dirichlet", "periodic", "neumann"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @classmethod
    def for_dx(cls, dx: float, half_width: float, seed: int = 0, boundary: str = "periodic") -> SHEGrid:
        return cls(dx, dx * dx / 2, half_width, seed, boundary)

    @property
    def r(self) -> np.ndarray:
        n = int(round(self.half_width / self.dx))
        return self.dx * np.arange(-n, n + 1)

    def value_at(self, tau: float, r: float) -> np.ndarray:
        """Per-replica Z(tau, r), linear interpolation in r on a stored snapshot."""
        i = int(np.argmin(np.abs(self.taus - tau)))
        if abs(self.taus[i] - tau) > 1e-9 * max(1.0, tau):
            raise KeyError(f"tau={tau} was not stored")
        rs = self.r
        return np.array([np.interp(r, rs, z) for z in self.Z[:, i]])

    def dump_csv(self, replica: int = 0, header: str = "") -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        buf.write("tau,r,Z\n")
        for i, tau in enumerate(self.taus):
            for rj, z in zip(self.r, self.Z[replica, i]):
                buf.write(f"{tau!r},{float(rj)!r},{float(z)!r}\n")
        return buf.getvalue()


def _laplacian(Z: np.ndarray, boundary: str) -> np.ndarray:
    L = np.empty_like(Z)
    L[:, 1:-1] = Z[:, 2:] - 2 * Z[:, 1:-1] + Z[:, :-2]
    if boundary == "periodic":
        L[:, 0] = Z[:, 1] - 2 * Z[:, 0] + Z[:, -1]
        L[:, -1] = Z[:, 0] - 2 * Z[:, -1] + Z[:, -2]
    elif boundary == "neumann":
        L[:, 0] = 2 * (Z[:, 1] - Z[:, 0])
        L[:, -1] = 2 * (Z[:, -2] - Z[:, -1])
    else:
        L[:, 0] = Z[:, 1] - 2 * Z[:, 0]
        L[:, -1] = Z[:, -2] - 2 * Z[:, -1]
    return L


def delta_ic(grid: SHEGrid) -> np.ndarray:
    """Heat kernel at time dt on the grid, normalized to discrete mass 1."""
    r = grid.r
    z = np.exp(-r * r / (2 * grid.dt))
    return z / (z.sum() * grid.dx)


def brownian_ic(grid: SHEGrid, kappa0: float, rng: np.random.Generator) -> np.ndarray:
    """exp(sqrt(kappa0) B(r)) with a two-sided Brownian motion pinned at B(0) = 0."""
    r = grid.r
    c = len(r) // 2
    inc = rng.normal(0.0, math.sqrt(kappa0 * grid.dx), size=len(r) - 1)
    B = np.zeros(len(r))
    B[c + 1:] = np.cumsum(inc[c:])
    B[:c] = -np.cumsum(inc[:c][::-1])[::-1]
    return np.exp(B)


def solve_she(ic, T: float, grid: SHEGrid, replicas: int = 1, taus=None, noise: bool = True,
              replica_start: int = 0, kappa0: float = 1.0, chunk: int = 64) -> SHEGrid:
    """Integrate the SHE with an explicit heat step and a positive multiplicative noise step.

    ``ic`` is 'delta', 'constant', 'brownian' (exp of a two-sided BM with
    diffusivity kappa0) or a callable r -> Z0(r).  The noise step multiplies by
    exp(dW/dx - dt/(2 dx)), dW ~ N(0, dt dx) per cell, which preserves the mean
    and positivity.  Each replica uses its own stream keyed by (seed, replica).
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    n_steps = int(round(T / grid.dt))
    if abs(n_steps * grid.dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of dt")
    taus = np.array([T] if taus is None else taus, dtype=float)
    snap_steps = {int(round(t / grid.dt)): k for k, t in enumerate(taus)}
    r = grid.r
    nx = len(r)
    rngs = [np.random.default_rng([int(grid.seed), replica_start + i, 0x5E]) for i in range(replicas)]
    start = 0
    if isinstance(ic, str) and ic == "delta":
        Z = np.tile(delta_ic(grid), (replicas, 1))
        start = 1  # the first interval of length dt is the exact heat kernel
    elif isinstance(ic, str) and ic == "constant":
        Z = np.ones((replicas, nx))
    elif isinstance(ic, str) and ic == "brownian":
        Z = np.stack([brownian_ic(grid, kappa0, rng) for rng in rngs])
    elif callable(ic):
        Z = np.tile(np.asarray(ic(r), dtype=float), (replicas, 1))
    else:
        raise ValueError(f"unknown initial condition {ic!r}")
    out = np.empty((replicas, len(taus), nx))
    if 0 in snap_steps:
        out[:, snap_steps[0]] = Z if start == 0 else np.nan
    c_heat = grid.dt / (2 * grid.dx ** 2)
    sd = math.sqrt(grid.dt / grid.dx)
    drift = grid.dt / (2 * grid.dx)
    buf = None
    for step in range(1, n_steps + 1):
        if step > start:
            Z = Z + c_heat * _laplacian(Z, grid.boundary)
            if noise:
                k = (step - start - 1) % chunk
                if k == 0:
                    buf = np.stack([g.standard_normal((chunk, nx)) for g in rngs], axis=1)
                Z = Z * np.exp(sd * buf[k] - drift)
        if step in snap_steps:
            out[:, snap_steps[step]] = Z
    grid.taus = taus
    grid.Z = out
    return grid


def she_delta_second_moment(tau: float) -> float:
    """E Z(tau, 0)^2 for the delta initial condition (exact, continuum)."""
    p = 1 / math.sqrt(2 * math.pi * tau)
    return p * p * (1 + math.sqrt(math.pi * tau) * math.exp(tau / 4) * stats.norm.cdf(math.sqrt(tau / 2)))


# ---------------------------------------------------------------- comparisons

def one_point_stats(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    skew = float(stats.skew(x, bias=False)) if n > 2 else math.nan
    return {"n": n, "mean": mean, "var": var, "skew": skew,
            "mean_se": math.sqrt(var / n),
            "var_se": var * math.sqrt(2 / (n - 1))}


TREND_Z = 2.0


def richardson_reference(she_values) -> dict:
    """Reference one-point statistics from SHE samples.

    ``she_values`` is either one sample array or a dict dx -> samples.  With two
    or more resolutions the two finest are combined as 2 S(dx_fine) - S(dx_coarse),
    cancelling the O(dx) bias of the scheme; standard errors are propagated.
    """
    if not isinstance(she_values, dict):
        return one_point_stats(she_values)
    if len(she_values) == 1:
        return one_point_stats(next(iter(she_values.values())))
    fine, coarse = sorted(she_values)[:2]
    a, b = one_point_stats(she_values[fine]), one_point_stats(she_values[coarse])
    w = coarse / fine  # 2 for a halving
    out = {"n": a["n"], "dx": [fine, coarse]}
    for key in ("mean", "var", "skew"):
        out[key] = (w * a[key] - b[key]) / (w - 1)
    for key in ("mean_se", "var_se"):
        out[key] = math.hypot(w * a[key], b[key]) / (w - 1)
    return out


def _trend(rows: list[dict], key: str, se_key: str, z: float) -> dict:
    """Gaps must shrink overall and never grow by more than z standard errors."""
    gaps = [row[key + "_gap"] for row in rows]
    ses = [row[se_key] for row in rows]
    steps = []
    for k in range(len(rows) - 1):
        rise = gaps[k + 1] - gaps[k]
        steps.append(rise / math.hypot(ses[k], ses[k + 1]))
    strict = all(a > b for a, b in zip(gaps, gaps[1:]))
    ok = all(zs <= z for zs in steps) and gaps[-1] < gaps[0]
    return {"gaps": gaps, "rise_z": steps, "strict": strict, "passed": bool(ok)}


def compare_one_point(particle: dict[float, np.ndarray], she_values, tau: float, r: float,
                      trend_z: float = TREND_Z) -> dict:
    """Compare one-point statistics of log Z across epsilons with the SHE reference.

    ``particle`` maps epsilon to samples of log Z (or log Z-tilde) at (tau, r).
    ``she_values`` holds reference samples at the same point, or a dict dx -> samples
    for an extrapolated reference.  A trend passes when the gap to the reference
    shrinks from the largest to the smallest epsilon and no intermediate step
    grows it by more than ``trend_z`` standard errors.
    """
    if not particle:
        raise ValueError("no particle ensembles given")
    if len(particle) < 2:
        raise ValueError("a trend needs at least two epsilons")
    ref = richardson_reference(she_values)
    rows = []
    for eps in sorted(particle, reverse=True):
        st = one_point_stats(particle[eps])
        rows.append({
            "epsilon": eps, **st,
            "mean_gap": abs(st["mean"] - ref["mean"]),
            "var_gap": abs(st["var"] - ref["var"]),
            "skew_gap": abs(st["skew"] - ref["skew"]),
            "mean_rel_gap": abs(st["mean"] - ref["mean"]) / abs(ref["mean"]),
            "var_rel_gap": abs(st["var"] - ref["var"]) / ref["var"],
        })
    mean_trend = _trend(rows, "mean", "mean_se", trend_z)
    var_trend = _trend(rows, "var", "var_se", trend_z)
    return {
        "tau": tau, "r": r, "reference": ref, "particle": rows,
        "mean_trend": mean_trend, "var_trend": var_trend,
        "mean_monotone": mean_trend["passed"],
        "var_monotone": var_trend["passed"],
        "final_var_rel_gap": rows[-1]["var_rel_gap"],
    }


def fitted_diffusivity(rs: np.ndarray, mean_profile: np.ndarray, tau: float) -> float:
    """D from the spread of an ensemble-mean profile, E Z(tau, r) ~ heat kernel of variance D tau."""
    w = np.clip(mean_profile, 0, None)
    m0 = np.trapezoid(w, rs)
    m1 = np.trapezoid(w * rs, rs) / m0
    m2 = np.trapezoid(w * (rs - m1) ** 2, rs) / m0
    return float(m2 / tau)
