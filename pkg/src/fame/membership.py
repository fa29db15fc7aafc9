"""Gaussian and two-sided Gaussian membership functions, plus the sculpted
partition in which consecutive MFs are tied together.

In a sculpted partition the centers are spaced four right-deviations apart
and each MF's left deviation is the previous MF's right deviation, so on any
interval between two neighbouring centers every other MF is at most
``exp(-8)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

TAIL_GRADE = math.exp(-8.0)
CENTER_SPACING = 4.0


@dataclass(frozen=True)
class GaussMF:
    c: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class Gauss2MF:
    c: float
    sigma_l: float
    sigma_r: float

    def __post_init__(self):
        if not (self.sigma_l > 0 and self.sigma_r > 0):
            raise ValueError(f"deviations must be positive, got {self.sigma_l}, {self.sigma_r}")


def gauss(z: float, mf: GaussMF) -> float:
    d = z - mf.c
    return math.exp(-d * d / (2.0 * mf.sigma * mf.sigma))


def gauss2(z: float, mf: Gauss2MF) -> float:
    d = z - mf.c
    s = mf.sigma_l if z <= mf.c else mf.sigma_r
    return math.exp(-d * d / (2.0 * s * s))


@dataclass(frozen=True)
class SculptedPartition:
    c1: float
    sigma_l1: float
    sigma_r: tuple[float, ...]
    centers: tuple[float, ...]
    sigma_l: tuple[float, ...]

    @property
    def P(self) -> int:
        return len(self.sigma_r)

    def mf(self, p: int) -> Gauss2MF:
        """MF ``p`` (0-based)."""
        return Gauss2MF(self.centers[p], self.sigma_l[p], self.sigma_r[p])

    def grades(self, z: float) -> list[float]:
        return [gauss2(z, self.mf(p)) for p in range(self.P)]


def sculpt(c1: float, sigma_l1: float, sigma_r) -> SculptedPartition:
    sigma_r = tuple(float(s) for s in np.atleast_1d(sigma_r))
    if not sigma_r:
        raise ValueError("a partition needs at least one MF")
    if not sigma_l1 > 0 or min(sigma_r) <= 0:
        raise ValueError("all deviations must be positive")
    centers = [float(c1)]
    for s in sigma_r[:-1]:
        centers.append(centers[-1] + CENTER_SPACING * s)
    sigma_l = (float(sigma_l1),) + sigma_r[:-1]
    return SculptedPartition(float(c1), float(sigma_l1), sigma_r, tuple(centers), sigma_l)


def sculpt_arrays(c1, sigma_l1, sigma_r):
    """Vectorised sculpting over leading axes.

    ``c1`` and ``sigma_l1`` have shape (...,), ``sigma_r`` shape (..., P).
    Returns ``(centers, sigma_l)`` each of shape (..., P). Works for any float
    dtype, which the finite-difference oracle relies on.
    """
    sigma_r = np.asarray(sigma_r)
    c1 = np.asarray(c1)[..., None]
    offsets = np.zeros_like(sigma_r)
    offsets[..., 1:] = np.cumsum(CENTER_SPACING * sigma_r[..., :-1], axis=-1)
    centers = c1 + offsets
    sigma_l = np.concatenate([np.asarray(sigma_l1)[..., None], sigma_r[..., :-1]], axis=-1)
    return centers, sigma_l


def locate(partition: SculptedPartition, z: float) -> int:
    """Index ``k`` with ``centers[k-1] <= z < centers[k]`` in 1-based terms:
    0 below the first center, P at or above the last."""
    return bisect.bisect_right(partition.centers, z)


def active_pair(partition: SculptedPartition, z: float) -> tuple[int, ...]:
    """0-based indices of the (at most two) MFs that matter at ``z``."""
    P = partition.P
    if P == 1:
        return (0,)
    k = locate(partition, z)
    lo = min(max(k, 1), P - 1) - 1
    return (lo, lo + 1)
