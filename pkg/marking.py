import math
from dataclasses import dataclass

import numpy as np

from errors import ConfigError

STRATEGIES = ("maximum", "equilibration")


@dataclass(frozen=True)
class MarkParams:
    strategy: str = "equilibration"
    theta: float = 0.25
    epsilon: float = 0.0
    # statistics the strategy uses on the elements left after pre-marking
    complement_stats: str = "subset"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown marking strategy '{self.strategy}' (expected one of {STRATEGIES})")
        _check_theta(self.theta)
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.complement_stats not in ("subset", "global"):
            raise ConfigError(f"complement_stats must be 'subset' or 'global', got '{self.complement_stats}'")


def _check_theta(theta: float):
    if not 0 < theta < 1:
        raise ConfigError(f"theta must lie in (0, 1), got {theta}")


def _check_eta(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if eta.size == 0:
        raise ValueError("cannot mark from an empty indicator vector")
    if not np.isfinite(eta).all() or (eta < 0).any():
        raise ValueError("indicators must be finite and non-negative")
    return eta


def maximum_strategy(eta, theta: float, eta_max: float | None = None) -> np.ndarray:
    """Indices of all elements with eta >= theta * max(eta)."""
    eta = _check_eta(eta)
    _check_theta(theta)
    if eta_max is None:
        eta_max = eta.max()
    return np.flatnonzero(eta >= theta * eta_max)


def equilibration_strategy(eta, theta: float, total: float | None = None, already: float = 0.0) -> np.ndarray:
    """Add the elements of largest eta batchwise (equal values together) until
    the marked sum of eta^2 reaches theta times the total."""
    eta = _check_eta(eta)
    _check_theta(theta)
    if total is None:
        total = float(np.sum(eta**2))
    if total == 0.0:
        return np.arange(len(eta))
    values, inverse = np.unique(eta, return_inverse=True)
    batch_sums = np.bincount(inverse.reshape(-1), weights=eta**2)[::-1]
    reached = already + np.cumsum(batch_sums) >= theta * total
    batches = int(np.argmax(reached)) + 1 if reached.any() else len(values)
    return np.flatnonzero(eta >= values[::-1][batches - 1])


def premarked(eta, epsilon: float) -> np.ndarray:
    """The ceil(epsilon * n) largest indicators, ties going to the lower index."""
    eta = _check_eta(eta)
    count = min(len(eta), math.ceil(round(epsilon * len(eta), 9)))
    order = np.lexsort((np.arange(len(eta)), -eta))
    return np.sort(order[:count])


def mark(eta, params: MarkParams) -> np.ndarray:
    """Pre-mark the top epsilon fraction, then apply the strategy to the rest.

    Returns the sorted indices of the marked elements.
    """
    eta = _check_eta(eta)
    first = premarked(eta, params.epsilon)
    rest = np.setdiff1d(np.arange(len(eta)), first)
    if len(rest) == 0:
        return first
    use_global = params.complement_stats == "global"
    if params.strategy == "maximum":
        chosen = maximum_strategy(eta[rest], params.theta, eta.max() if use_global else None)
    elif use_global:
        total = float(np.sum(eta**2))
        already = float(np.sum(eta[first] ** 2))
        chosen = np.array([], dtype=np.int64)
        if total == 0.0 or already < params.theta * total:
            chosen = equilibration_strategy(eta[rest], params.theta, total=total, already=already)
    else:
        chosen = equilibration_strategy(eta[rest], params.theta)
    return np.union1d(first, rest[chosen]).astype(np.int64)
