"""One-step walks X'(s), X(s), the heat kernel p(t2, t1, .) and the generating function phi."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hsep.model import ModelParams

TAIL_TOL = 1e-14


@dataclass(frozen=True)
class KernelTable:
    """Distribution on offset + start + {0, 1, ..., len(weights)-1}.

    ``offset`` is the real lattice origin (e.g. -mu(s)); ``start`` is an
    integer shift of the first stored weight.  Mass outside the stored
    window is at most ``tail_mass_bound``.
    """

    offset: float
    weights: np.ndarray
    tail_mass_bound: float = 0.0
    start: int = 0

    @property
    def support(self) -> np.ndarray:
        return self.offset + self.start + np.arange(len(self.weights))

    @property
    def int_support(self) -> np.ndarray:
        return self.start + np.arange(len(self.weights))

    def total(self) -> float:
        return math.fsum(self.weights)

    def mean(self) -> float:
        return math.fsum(self.weights * self.support)

    def moment(self, k: int) -> float:
        return math.fsum(self.weights * self.support ** k)

    def variance(self) -> float:
        m = self.mean()
        return math.fsum(self.weights * (self.support - m) ** 2)

    def prefix(self, length: int) -> np.ndarray:
        """Weights on integer shifts 0..length-1 (zeros outside the stored window)."""
        out = np.zeros(length)
        lo = max(self.start, 0)
        hi = min(self.start + len(self.weights), length)
        if hi > lo:
            out[lo:hi] = self.weights[lo - self.start:hi - self.start]
        return out

    def convolve(self, other: KernelTable, max_len: int | None = None) -> KernelTable:
        w = np.convolve(self.weights, other.weights)
        tail = self.tail_mass_bound + other.tail_mass_bound
        if max_len is not None and len(w) > max_len:
            tail += max(0.0, math.fsum(w[max_len:]))
            w = w[:max_len]
        return KernelTable(self.offset + other.offset, w, tail, self.start + other.start)

    def trimmed(self, tol: float) -> KernelTable:
        """Drop leading/trailing weights below tol, booking them in the tail bound."""
        keep = np.nonzero(self.weights >= tol)[0]
        if len(keep) == 0:
            return self
        lo, hi = keep[0], keep[-1] + 1
        dropped = math.fsum(self.weights[:lo]) + math.fsum(self.weights[hi:])
        return KernelTable(self.offset, self.weights[lo:hi].copy(), self.tail_mass_bound + dropped, self.start + int(lo))

    def dump(self) -> str:
        return f"{self.offset!r} {self.start}\n" + " ".join(repr(float(w)) for w in self.weights)

    @classmethod
    def load(cls, text: str) -> KernelTable:
        head, body = text.strip().split("\n", 1)
        off, start = head.split()
        return cls(float(off), np.array([float(v) for v in body.split()]), 0.0, int(start))


def _step_consts(s: int, p: ModelParams):
    al = p.alpha_at(s)
    A = al * (1 - p.q) / (1 + al)  # P(X' > 0)
    c = (p.nu + al) / (1 + al)  # geometric ratio
    return al, A, c


def _length_for(ratio: float, prefactor: float, tol: float) -> int:
    if prefactor <= tol or ratio <= 0:
        return 2
    # smallest L with prefactor * ratio**(L-1) < tol
    return max(2, int(math.ceil(math.log(tol / prefactor) / math.log(ratio))) + 2)


def base_kernel(s: int, p: ModelParams, length: int | None = None, tol: float = TAIL_TOL) -> KernelTable:
    """Law of X'(s) on N: P(0) = 1 - A, P(n) = A c^{n-1} (1-nu)/(1+alpha(s)) for n > 0."""
    al, A, c = _step_consts(s, p)
    if length is None:
        length = _length_for(c, A, tol)
    n = np.arange(length)
    w = np.empty(length)
    w[0] = 1 - A
    w[1:] = A * c ** (n[1:] - 1.0) * (1 - p.nu) / (1 + al)
    tail = A * c ** (length - 1.0)
    return KernelTable(0.0, w, tail)


def tilted_kernel(s: int, p: ModelParams, length: int | None = None, tol: float = TAIL_TOL) -> KernelTable:
    """Law of X(s): P(X + mu(s) = n) = lambda(s) rho^n P(X'(s) = n)."""
    al, A, c = _step_consts(s, p)
    lam = p.constants.lambda_at(s)
    rc = p.rho * c
    pref = lam * A * (1 - p.nu) / (1 + al) * p.rho / (1 - rc)
    if length is None:
        length = _length_for(rc, pref, tol)
        # also keep the dropped second moment below tol
        while pref * rc ** (length - 1.0) * (length + 1.0 / (1 - rc)) ** 2 > tol:
            length += 8
    base = base_kernel(s, p, length)
    n = np.arange(length)
    w = lam * p.rho ** n * base.weights
    tail = pref * rc ** (length - 1.0)
    total = math.fsum(w) + tail
    if abs(total - 1) > 1e-10:
        raise ValueError(f"tilted kernel normalization off by {total - 1:.3e}")
    return KernelTable(-p.constants.mu_at(s), w, tail)


def heat_kernel(t2: int, t1: int, p: ModelParams, max_len: int | None = None,
                trim: float | None = None) -> KernelTable:
    """Law of X(t1) + ... + X(t2-1) on the lattice N + mu_hat(t1) - mu_hat(t2).

    With ``max_len`` the first max_len weights are exact and the rest is
    booked as tail mass; ``trim`` drops negligible weights at both ends.
    """
    if t2 < t1:
        raise ValueError("heat kernel needs t1 <= t2")
    c = p.constants
    offset = -(c.mu_hat(t2) - c.mu_hat(t1))
    if t2 == t1:
        return KernelTable(offset, np.array([1.0]), 0.0)
    steps = [tilted_kernel(s, p, length=max_len) if max_len else tilted_kernel(s, p) for s in range(t1, t2)]
    out = KernelTable(0.0, np.array([1.0]), 0.0)
    for k in steps:
        out = out.convolve(KernelTable(0.0, k.weights, k.tail_mass_bound), max_len=max_len)
        if trim is not None:
            out = out.trimmed(trim)
    return KernelTable(offset, out.weights, out.tail_mass_bound, out.start)


def heat_kernel_family(t_end: int, t_from: int, p: ModelParams, max_len: int) -> dict[int, np.ndarray]:
    """Integer-shift weights of p(t_end, s) for s = t_from..t_end, exact on 0..max_len-1."""
    out = {t_end: np.eye(1, max_len).ravel()}
    cur = KernelTable(0.0, np.array([1.0]))
    for s in range(t_end - 1, t_from - 1, -1):
        k = tilted_kernel(s, p, length=max_len)
        cur = KernelTable(0.0, k.weights).convolve(cur, max_len=max_len)
        out[s] = cur.prefix(max_len)
    return out


def _gen_base(y, s: int, p: ModelParams):
    """E[lambda(s) y^{X'(s)}] in closed form."""
    al = p.alpha_at(s)
    lam = p.constants.lambda_at(s)
    q, nu = p.q, p.nu
    return lam * (1 - nu * y + q * al - q * al * y) / (1 - nu * y + al - al * y)


def phi(x, s: int, p: ModelParams):
    """E[x^{X(s)}] = x^{-mu(s)} E[lambda(s) (rho x)^{X'(s)}] for x > 0 in the convergence disk."""
    x = np.asarray(x, dtype=float)
    al = p.alpha_at(s)
    ratio = p.rho * x * (p.nu + al) / (1 + al)
    if np.any(x <= 0) or np.any(np.abs(ratio) >= 1):
        raise ValueError("phi: x outside the region of convergence")
    out = x ** (-p.constants.mu_at(s)) * _gen_base(p.rho * x, s, p)
    return float(out) if out.ndim == 0 else out


def phi_direct(x, s: int, p: ModelParams, tol: float = 1e-16):
    """E[x^{X(s)}] by summing the tilted kernel."""
    k = tilted_kernel(s, p, tol=tol)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = np.array([math.fsum(k.weights * xi ** k.support) for xi in x])
    return float(vals[0]) if vals.size == 1 else vals


SUP_EXPONENT_BRACKET = (-0.6, -0.4)
EXPMOMENT_SLACK = 1.05


def kernel_scaling_probe(T: float, eps_list, p: ModelParams, u: float = 1.0,
                         t_min: int = 16, t_max: int = 4096, n_points: int = 13) -> dict:
    """Empirical scaling of the heat kernel against the bounds it should obey.

    Per epsilon: log-log slope of sup_zeta p(t, 0, zeta) over t in [t_min, t_max],
    the constant sup p * eps^{1/2} (t+1)^{1/2}, the exponential moment
    sum_zeta p e^{u eps |zeta|} along t <= eps^-3 T, and the variance check.
    """
    report = {"T": T, "u": u, "t_range": [t_min, t_max], "eps": {}}
    checkpoints = np.unique(np.geomspace(t_min, t_max, n_points).round().astype(int))
    for eps in eps_list:
        pe = p.with_epsilon(eps)
        c = pe.constants
        t_mom = int(math.floor(eps ** -3 * T))
        horizon = max(t_max, t_mom)
        cur = KernelTable(0.0, np.array([1.0]))
        sups, ts, bdd = [], [], []
        mom_t, mom_v = [], []
        var_err = 0.0
        steps = [tilted_kernel(s, pe) for s in range(pe.J)]
        mom_grid = set(np.unique(np.linspace(1, max(t_mom, 1), 64).round().astype(int)).tolist())
        for t in range(1, horizon + 1):
            k = steps[(t - 1) % pe.J]
            cur = cur.convolve(KernelTable(0.0, k.weights, k.tail_mass_bound)).trimmed(1e-17)
            if t in checkpoints:
                sups.append(cur.weights.max())
                ts.append(t)
                bdd.append(cur.weights.max() * math.sqrt(eps) * math.sqrt(t + 1))
            if t <= t_mom and t in mom_grid:
                zeta = cur.int_support - (c.mu_hat(t) - c.mu_hat(0))
                mom_t.append(t)
                mom_v.append(math.fsum(cur.weights * np.exp(u * eps * np.abs(zeta))))
            if t == t_max:
                zeta = cur.int_support - c.mu_hat(t)
                w = cur.weights / cur.weights.sum()
                var = math.fsum(w * zeta ** 2) - math.fsum(w * zeta) ** 2
                expected = sum(c.r_star ** 2 * c.sigma_at(s) for s in range(t))
                var_err = abs(var - expected) / expected
        slope = float(np.polyfit(np.log(ts), np.log(sups), 1)[0])
        mom_v = np.array(mom_v)
        report["eps"][eps] = {
            "sup_exponent": slope,
            "sup_constant_max": float(max(bdd)),
            "expmoment_max": float(mom_v.max()) if len(mom_v) else math.nan,
            "expmoment_last": float(mom_v[-1]) if len(mom_v) else math.nan,
            # E exp(u |N(0, v)|), v the macroscopic variance of eps*zeta at t = eps^-3 T
            "expmoment_continuum": _abs_gauss_expmoment(u, c.r_star ** 2 * T / (c.tau_star_eps * pe.J)),
            "variance_rel_error": var_err,
            "t_expmoment": int(t_mom),
        }
        row = report["eps"][eps]
        row["sup_exponent_ok"] = bool(SUP_EXPONENT_BRACKET[0] <= slope <= SUP_EXPONENT_BRACKET[1])
        row["expmoment_ok"] = bool(row["expmoment_max"] <= EXPMOMENT_SLACK * row["expmoment_continuum"])
        row["variance_ok"] = bool(var_err <= 1e-8)
    report["passed"] = all(r["sup_exponent_ok"] and r["expmoment_ok"] and r["variance_ok"]
                           for r in report["eps"].values())
    return report


def _abs_gauss_expmoment(u: float, v: float) -> float:
    return 2 * math.exp(u * u * v / 2) * 0.5 * (1 + math.erf(u * math.sqrt(v) / math.sqrt(2)))
