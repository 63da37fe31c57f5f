"""Stationary behaviour of the CSMA Markov chain.

With countdown rate ``exp(beta * r_l)`` and unit mean transmission time the
chain over independent sets has the product-form law
``tau_i ~ exp(beta * sum_{l in i} r_l)``. All exponentials are taken after
subtracting the largest exponent, so ``beta * r`` in the thousands is fine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import IndependentSetFamily

# Airtime sharing constant of legacy 802.11 CSMA under practical settings.
LCSMA_RHO = 2.24


def as_ta_vector(r, link_count: int, r_max: float | None = None) -> np.ndarray:
    """Validate a transmission-aggressiveness vector."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        r = np.full(link_count, float(r))
    if r.shape != (link_count,):
        raise ValueError(f"expected {link_count} TA values, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("TA vector must be finite")
    if r_max is not None and np.any(r > r_max):
        raise ValueError(f"TA vector exceeds r_max={r_max}")
    return r


@dataclass(frozen=True)
class ScheduleDistribution:
    """Probability of each independent set of ``family``."""

    tau: np.ndarray
    family: IndependentSetFamily

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.shape != (len(self.family),):
            raise ValueError("one probability per independent set is required")
        if np.any(tau < 0) or abs(tau.sum() - 1.0) > 1e-12:
            raise ValueError("schedule distribution must be nonnegative and sum to 1")
        object.__setattr__(self, "tau", tau)

    def total_variation(self, other) -> float:
        other = other.tau if isinstance(other, ScheduleDistribution) else np.asarray(other)
        return 0.5 * float(np.abs(self.tau - other).sum())


def _set_weights(family: IndependentSetFamily, r, beta: float) -> np.ndarray:
    if not beta > 0:
        raise ValueError("beta must be positive")
    r = as_ta_vector(r, family.link_count)
    return beta * (family.membership @ r)


def stationary_distribution(family: IndependentSetFamily, r, beta: float) -> ScheduleDistribution:
    w = _set_weights(family, r, beta)
    w -= w.max()
    tau = np.exp(w)
    tau /= tau.sum()
    return ScheduleDistribution(tau, family)


def link_service_rates(dist: ScheduleDistribution) -> np.ndarray:
    """Fraction of airtime each link is active: ``y_l = sum_{i ∋ l} tau_i``."""
    y = dist.family.membership.T @ dist.tau
    return np.clip(y, 0.0, 1.0)


def service_rates(family: IndependentSetFamily, r, beta: float) -> np.ndarray:
    return link_service_rates(stationary_distribution(family, r, beta))


def lcsma_throughput(family: IndependentSetFamily, rho: float = LCSMA_RHO) -> np.ndarray:
    """Link throughput when every link uses the same access intensity ``rho``.

    Each schedule is weighted by ``rho ** |i|``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    logw = family.sizes * np.log(rho)
    logw -= logw.max()
    w = np.exp(logw)
    return (family.membership.T @ w) / w.sum()


def log_partition(family: IndependentSetFamily, r, beta: float) -> float:
    """``g_beta(r) = (1/beta) log sum_i exp(beta sum_{l in i} r_l)``."""
    return float(logsumexp(_set_weights(family, r, beta))) / beta


def log_partition_gradient(family: IndependentSetFamily, r, beta: float) -> np.ndarray:
    """Gradient of ``log_partition`` in ``r``; equal to the link service rates."""
    return service_rates(family, r, beta)


def log_partition_hessian(family: IndependentSetFamily, r, beta: float) -> np.ndarray:
    """``beta`` times the covariance of the link-activity indicators."""
    tau = stationary_distribution(family, r, beta).tau
    A = family.membership
    y = A.T @ tau
    return beta * (A.T @ (tau[:, None] * A) - np.outer(y, y))


def entropy(tau) -> float:
    tau = np.asarray(tau, dtype=float)
    nz = tau[tau > 0]
    return float(-(nz * np.log(nz)).sum())
