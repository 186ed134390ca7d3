"""Model parameters, derived centering constants and jump probabilities."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np

# q ** INF_GAP == 0 for every q in [0, 1); used for the gap in front of the leftmost particle.
INF_GAP = math.inf

PARAM_KEYS = ("q", "nu", "alpha", "J", "rho", "epsilon")


@dataclass(frozen=True)
class ModelParams:
    q: float
    nu: float
    alpha: float
    J: int = 1
    rho: float = 0.5
    epsilon: float | None = None

    def __post_init__(self):
        if self.epsilon is not None:
            if not self.epsilon > 0:
                raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
            if not math.isclose(self.q, math.exp(-self.epsilon), rel_tol=0, abs_tol=4e-16):
                raise ValueError("in scaling mode q must equal exp(-epsilon)")
        if not 0.0 <= self.q < 1.0:
            raise ValueError(f"q must lie in [0, 1), got {self.q}")
        if not 0.0 <= self.nu < 1.0:
            raise ValueError(f"nu must lie in [0, 1), got {self.nu}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"J must be a positive integer, got {self.J}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        object.__setattr__(self, "J", int(self.J))

    @classmethod
    def scaling(cls, epsilon: float, nu: float = 0.25, alpha: float = 1.0, J: int = 1, rho: float = 0.5):
        """Weak-noise scaling: q = exp(-epsilon) with the other parameters held fixed."""
        return cls(q=math.exp(-epsilon), nu=nu, alpha=alpha, J=J, rho=rho, epsilon=epsilon)

    def with_epsilon(self, epsilon: float) -> ModelParams:
        return ModelParams.scaling(epsilon, nu=self.nu, alpha=self.alpha, J=self.J, rho=self.rho)

    @property
    def eps(self) -> float:
        """Effective noise strength: epsilon if set, else -log q."""
        if self.epsilon is not None:
            return self.epsilon
        return -math.log(self.q) if self.q > 0 else math.inf

    def phase(self, s: int) -> int:
        return int(s) % self.J

    def alpha_at(self, s: int) -> float:
        return self.alpha * self.q ** self.phase(s)

    @cached_property
    def constants(self) -> DerivedConstants:
        return derive_constants(self)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def echo(self) -> str:
        """One-line resolved parameter echo used in output headers."""
        return " ".join(f"{k}={v!r}" for k, v in self.as_dict().items())


@dataclass(frozen=True)
class DerivedConstants:
    gamma: float
    a: np.ndarray  # a_j for j = 0..J
    b: float
    b_prime: float
    r_star: float
    mu: np.ndarray  # per phase j = 0..J-1
    lam: np.ndarray
    sigma: np.ndarray
    tau_star_eps: float
    eps: float = field(default=math.nan)

    def mu_at(self, s: int) -> float:
        return float(self.mu[s % len(self.mu)])

    def lambda_at(self, s: int) -> float:
        return float(self.lam[s % len(self.lam)])

    def sigma_at(self, s: int) -> float:
        return float(self.sigma[s % len(self.sigma)])

    def mu_hat(self, t: int) -> float:
        """Sum of mu(s) for s < t, period-wise so that drift does not accumulate."""
        t = int(t)
        J = len(self.mu)
        full, rest = divmod(t, J)
        return math.fsum(self.mu) * full + math.fsum(self.mu[:rest])

    def log_lambda_hat(self, t: int) -> float:
        t = int(t)
        J = len(self.lam)
        full, rest = divmod(t, J)
        logs = np.log(self.lam)
        return math.fsum(logs) * full + math.fsum(logs[:rest])

    def t_of_tau(self, tau: float, J: int) -> float:
        """Microscopic time eps^-3 tau* J tau (real valued)."""
        return self.eps ** -3 * self.tau_star_eps * J * tau


def derive_constants(p: ModelParams) -> DerivedConstants:
    rho, nu, q = p.rho, p.nu, p.q
    gamma = (1 - rho) / (1 - nu * rho)
    if nu > 0 and gamma >= 1 / nu:
        raise ValueError("gamma >= 1/nu")
    alphas = p.alpha * q ** np.arange(p.J + 1, dtype=float)
    a = alphas * gamma / (1 + alphas * gamma)
    b = gamma / (1 - gamma)
    b_prime = nu * gamma / (1 - nu * gamma)
    if b == b_prime:
        raise ValueError("b == b' makes r* undefined")
    r_star = 1 / (b - b_prime)
    da = a[:-1] - a[1:]
    mu = da * r_star
    lam = (1 + alphas[:-1] * gamma) / (1 + q * alphas[:-1] * gamma)
    sigma = a[:-1] ** 2 - a[1:] ** 2 + da * (b + b_prime)
    eps = p.eps
    # The period sum of sigma is O(eps); the eps factor makes tau* O(1) as eps -> 0.
    period = a[0] ** 2 - a[-1] ** 2 + (a[0] - a[-1]) * (b + b_prime)
    tau_star = eps / period if (period > 0 and math.isfinite(eps)) else math.nan
    for arr in (a, mu, lam, sigma):
        arr.setflags(write=False)
    return DerivedConstants(
        gamma=gamma, a=a, b=b, b_prime=b_prime, r_star=r_star,
        mu=mu, lam=lam, sigma=sigma, tau_star_eps=tau_star, eps=eps,
    )


def tau_star_leading(p: ModelParams) -> float:
    """Leading-order tau* as eps -> 0."""
    c = p.constants
    ag = p.alpha * c.gamma
    return (1 + ag) ** 2 / (p.J * ag * (2 * c.a[0] + c.b + c.b_prime))


def qpow(q: float, g):
    """q ** g with q ** inf = 0 and q ** 0 = 1 (also for q = 0)."""
    g = np.asarray(g, dtype=float)
    if q == 0.0:
        return np.where(g == 0, 1.0, 0.0)
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(g * math.log(q))


def jump_probs(s: int, g, p: ModelParams):
    """(P(B = 1), P(B' = 1)) at step s and gap g (scalar or array, inf allowed)."""
    al = p.alpha_at(s)
    qg = qpow(p.q, g)
    pB = al * (1 - qg) / (1 + al)
    pBp = (al + p.nu * qg) / (1 + al)
    if np.ndim(pB) == 0:
        return float(pB), float(pBp)
    return pB, pBp


def read_config(path: str | Path) -> dict[str, str]:
    """Read a `key = value` text file (no section headers, '#' comments)."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[config]\n" + text)
    return dict(parser["config"])


def params_from_mapping(values: dict, epsilon: float | None = None) -> ModelParams:
    """Build ModelParams from string/number mapping; epsilon overrides q when given."""
    eps = epsilon if epsilon is not None else values.get("epsilon")
    nu = float(values.get("nu", 0.25))
    alpha = float(values.get("alpha", 1.0))
    J = int(values.get("J", 1))
    rho = float(values.get("rho", 0.5))
    if eps is not None and str(eps).lower() not in ("", "none"):
        return ModelParams.scaling(float(eps), nu=nu, alpha=alpha, J=J, rho=rho)
    if "q" not in values:
        raise ValueError("config needs either q or epsilon")
    return ModelParams(q=float(values["q"]), nu=nu, alpha=alpha, J=J, rho=rho)
