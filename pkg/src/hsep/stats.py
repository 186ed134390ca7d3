"""Streaming moments with exact pairwise merging."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class StatsAccumulator:
    """Count, mean, central sums M2..M4, min and max of an array-valued observable.

    Batches are folded in with the pairwise update of Chan et al. / Pebay, so
    ``merge`` is associative and commutative up to rounding.
    """

    count: int = 0
    mean: np.ndarray | float = 0.0
    M2: np.ndarray | float = 0.0
    M3: np.ndarray | float = 0.0
    M4: np.ndarray | float = 0.0
    min: np.ndarray | float = math.inf
    max: np.ndarray | float = -math.inf

    @classmethod
    def from_samples(cls, x) -> StatsAccumulator:
        """Exact statistics of a batch; samples along axis 0."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if n == 0:
            return cls()
        mean = x.mean(axis=0)
        d = x - mean
        d2 = d * d
        return cls(n, mean, d2.sum(axis=0), (d2 * d).sum(axis=0), (d2 * d2).sum(axis=0),
                   x.min(axis=0), x.max(axis=0))

    def push(self, x) -> StatsAccumulator:
        merged = self.merge(StatsAccumulator.from_samples(x))
        self.__dict__.update(merged.__dict__)
        return self

    def merge(self, other: StatsAccumulator) -> StatsAccumulator:
        na, nb = self.count, other.count
        if na == 0:
            return StatsAccumulator(**other.__dict__)
        if nb == 0:
            return StatsAccumulator(**self.__dict__)
        n = na + nb
        delta = other.mean - self.mean
        d2 = delta * delta
        mean = self.mean + delta * nb / n
        M2 = self.M2 + other.M2 + d2 * na * nb / n
        M3 = (self.M3 + other.M3 + d2 * delta * na * nb * (na - nb) / n ** 2
              + 3 * delta * (na * other.M2 - nb * self.M2) / n)
        M4 = (self.M4 + other.M4 + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / n ** 3
              + 6 * d2 * (na * na * other.M2 + nb * nb * self.M2) / n ** 2
              + 4 * delta * (na * other.M3 - nb * self.M3) / n)
        return StatsAccumulator(n, mean, M2, M3, M4,
                                np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    @property
    def variance(self):
        """Unbiased sample variance."""
        return self.M2 / (self.count - 1) if self.count > 1 else np.nan * np.asarray(self.M2)

    @property
    def skewness(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return math.sqrt(self.count) * self.M3 / self.M2 ** 1.5

    @property
    def kurtosis(self):
        """Excess kurtosis (population form)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.count * self.M4 / (self.M2 * self.M2) - 3.0

    @property
    def std_error(self):
        return np.sqrt(self.variance / self.count)

    def to_dict(self) -> dict:
        def tolist(v):
            return np.asarray(v).tolist()
        return {"count": self.count, "mean": tolist(self.mean), "variance": tolist(self.variance),
                "skewness": tolist(self.skewness), "kurtosis": tolist(self.kurtosis),
                "min": tolist(self.min), "max": tolist(self.max)}
