"""Deterministic Bernoulli environment.

Every uniform is a pure function of (seed, replica, step, label, kind), computed
with a SplitMix64-style counter hash.  Sequential and parallel updates therefore
see identical randomness regardless of evaluation order or batch layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hsep.model import ModelParams, jump_probs

KIND_B = 0
KIND_BP = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STEP_MUL = np.uint64(0xD1B54A32D192ED03)
_LABEL_MUL = np.uint64(0xAEF17502108EF2D9)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def replica_keys(seed: int, replicas) -> np.ndarray:
    """Per-replica 64-bit keys from keyed hashing of (seed, replica index).

    The seed is expanded once through numpy's SeedSequence; each replica index
    is then mixed with that key, so a replica's stream does not depend on which
    other replicas are present.
    """
    replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64)).astype(np.uint64)
    k = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).generate_state(2, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(_mix64(replicas * _GOLDEN + k[0]) ^ k[1])


def counter_uniforms(keys: np.ndarray, s: int, labels: np.ndarray, kind) -> np.ndarray:
    """Uniforms in [0, 1) for keys (R,) x labels (R, N) at step s.

    ``kind`` may be an int or an array broadcasting against labels[..., None]
    (then the result gains a trailing axis).
    """
    keys = np.asarray(keys, dtype=np.uint64)
    labels = np.asarray(labels, dtype=np.int64).astype(np.uint64)
    kind = np.asarray(kind, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64(keys + np.uint64(s) * _STEP_MUL + _GOLDEN)
        if kind.ndim:
            ctr = labels[..., None] * np.uint64(2) + kind
            h = h[:, None, None]
        else:
            ctr = labels * np.uint64(2) + kind
            h = h[:, None]
        h = _mix64(h + ctr * _LABEL_MUL)
    return (h >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)


_BOTH = np.array([KIND_B, KIND_BP], dtype=np.uint64)


@dataclass(frozen=True)
class BernoulliEnv:
    """Realization of the independent Bernoulli variables B_n(s, g), B'_n(s, g).

    One uniform per (replica, s, n, kind) is shared by all gaps g, i.e.
    B_n(s, g) = 1{U < P(B = 1 | g)}; only the realized gap is ever queried.
    """

    params: ModelParams
    seed: int = 0
    replicas: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "replicas", tuple(int(r) for r in np.atleast_1d(self.replicas)))
        object.__setattr__(self, "_keys", replica_keys(self.seed, self.replicas))

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def n_replicas(self) -> int:
        return len(self.replicas)

    def subset(self, idx) -> BernoulliEnv:
        reps = np.asarray(self.replicas)[idx]
        return BernoulliEnv(self.params, self.seed, tuple(np.atleast_1d(reps)))

    def uniforms(self, kind: int, s: int, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim == 1:
            labels = np.broadcast_to(labels, (self.n_replicas, labels.shape[0]))
        return counter_uniforms(self._keys, s, labels, kind)

    def draw(self, kind: int, s: int, labels, gaps) -> np.ndarray:
        """Bernoulli bits (int8) for the given kind at labels with gaps, shape (R, N)."""
        pB, pBp = jump_probs(s, np.asarray(gaps, dtype=float), self.params)
        prob = pB if kind == KIND_B else pBp
        return (self.uniforms(kind, s, labels) < prob).astype(np.int8)

    def draw_pair(self, s: int, labels, gaps) -> tuple[np.ndarray, np.ndarray]:
        """(B, B') bits in one pass; identical to two calls of draw."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim == 1:
            labels = np.broadcast_to(labels, (self.n_replicas, labels.shape[0]))
        pB, pBp = jump_probs(s, np.asarray(gaps, dtype=float), self.params)
        U = counter_uniforms(self._keys, s, labels, _BOTH)
        return (U[..., 0] < pB).astype(np.int8), (U[..., 1] < pBp).astype(np.int8)

    def draw_one(self, kind: int, s: int, n: int, g, replica_index: int = 0) -> int:
        pB, pBp = jump_probs(s, g, self.params)
        prob = pB if kind == KIND_B else pBp
        u = counter_uniforms(self._keys[replica_index:replica_index + 1], s, np.array([[n]]), kind)[0, 0]
        return int(u < prob)
