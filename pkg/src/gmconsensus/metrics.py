"""OSPA distance and the network / consensus-efficiency aggregates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .fusion import hungarian


@dataclass(frozen=True)
class OspaConfig:
    cutoff: float = 1000.0
    order: float = 2.0

    def __post_init__(self):
        if not self.cutoff > 0:
            raise DomainError("OSPA cutoff must be positive")
        if not self.order >= 1:
            raise DomainError("OSPA order must be >= 1")


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
    return np.atleast_2d(X)


def ospa(X, Y, cfg: OspaConfig = OspaConfig()) -> float:
    """OSPA distance between two finite point sets (rows are points)."""
    X, Y = _as_points(X), _as_points(Y)
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        X, Y, m, n = Y, X, n, m
    c, p = cfg.cutoff, cfg.order
    if m == 0:
        return float(c)
    dist = np.sqrt(np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1))
    D = np.minimum(dist, c) ** p
    assign = hungarian(D)
    total = math.fsum(D[i, j] for i, j in assign.pairs) + c**p * (n - m)
    return float((total / n) ** (1.0 / p))


def network_ospa(values: Sequence[float]) -> float:
    """Mean of the per-node OSPA values at one step."""
    values = list(values)
    if not values:
        raise DomainError("network OSPA needs at least one node")
    return math.fsum(values) / len(values)


def time_average(values: Sequence[float], burn_in: int = 0) -> float:
    values = list(values)[burn_in:]
    if not values:
        raise DomainError("nothing left to average after burn-in")
    return math.fsum(values) / len(values)


def consensus_efficiency(ospa_no_comm: float, ospa_with_comm: float, tuples: float) -> float | None:
    """OSPA reduction per transmitted tuple; ``None`` when nothing was sent."""
    if tuples == 0:
        return None
    if tuples < 0:
        raise DomainError("tuple count must be >= 0")
    return (ospa_no_comm - ospa_with_comm) / tuples
