"""Maximum-likelihood fit of a drifted Wiener process to a log-abundance series.

With x_i = log n_i observed at times t_0 < t_1 < ... < t_q and increments
dx_i = x_i - x_{i-1} over tau_i = t_i - t_{i-1}, the Gaussian likelihood of
the increments gives

    mu_hat     = (x_q - x_0) / t_q
    sigma2_hat = (1/q) sum (dx_i - mu_hat tau_i)^2 / tau_i

with mu_hat ~ N(mu, sigma^2 / t_q) and q sigma2_hat / sigma^2 ~ chi^2_{q-1},
independently.  ``transform_wz`` maps an estimate to the (w, z) coordinates
at a prediction horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError, DomainError


@dataclass(frozen=True)
class TimeSeries:
    """Observation times (years) and strictly positive abundances."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        n = tuple(float(v) for v in self.values)
        if len(t) != len(n):
            raise DomainError(f"times and values differ in length ({len(t)} vs {len(n)})")
        if len(t) < 2:
            raise DomainError("a series needs at least two observations")
        if not all(math.isfinite(v) for v in t + n):
            raise DomainError("times and values must be finite")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise DomainError("observation times must be strictly increasing")
        if any(v <= 0 for v in n):
            raise DomainError("abundances must be strictly positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", n)

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class DriftEstimate:
    """ML estimates of drift and variance.

    ``sigma2_hat`` and ``sigma2_unbiased`` are NaN when only one increment is
    available (``variance_available`` is then False).
    """

    mu_hat: float
    sigma2_hat: float
    q: int
    t_q: float

    def __post_init__(self):
        if self.q < 1:
            raise DomainError(f"q must be >= 1, got {self.q!r}")
        if not self.t_q > 0:
            raise DomainError(f"t_q must be positive, got {self.t_q!r}")
        if self.sigma2_hat < 0:
            raise DomainError(f"sigma2_hat must be non-negative, got {self.sigma2_hat!r}")

    @property
    def variance_available(self) -> bool:
        return self.q > 1 and not math.isnan(self.sigma2_hat)

    @property
    def sigma2_unbiased(self) -> float:
        if not self.variance_available:
            return math.nan
        return self.q / (self.q - 1) * self.sigma2_hat

    @property
    def r_hat(self) -> float:
        """Growth rate on the absolute scale, mu + sigma^2 / 2."""
        if not self.variance_available:
            return math.nan
        return self.mu_hat + 0.5 * self.sigma2_hat


@dataclass(frozen=True)
class HorizonSpec:
    """Prediction horizon and initial log-distance to the threshold."""

    t_star: float
    x_d: float
    n_e: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.t_star) and self.t_star > 0):
            raise DomainError(f"t_star must be positive, got {self.t_star!r}")
        if not (math.isfinite(self.x_d) and self.x_d > 0):
            raise DomainError(f"x_d must be positive, got {self.x_d!r}")


def fit_drift(s: TimeSeries) -> DriftEstimate:
    """Maximum-likelihood drift and variance from a possibly unevenly spaced series."""
    t = np.asarray(s.times)
    x = np.log(np.asarray(s.values))
    tau = np.diff(t)
    if np.any(tau <= 0):
        raise DomainError("observation intervals must be positive")
    q = tau.size
    t_q = float(t[-1] - t[0])
    mu = float((x[-1] - x[0]) / t_q)
    if q == 1:
        return DriftEstimate(mu, math.nan, 1, t_q)
    resid = np.diff(x) - mu * tau
    sigma2 = float(np.sum(resid * resid / tau) / q)
    return DriftEstimate(mu, sigma2, q, t_q)


def wz_from_params(mu, sigma2, x_d, t_star):
    """(w, z) from drift, variance, log-distance and horizon; broadcasts."""
    mu = np.asarray(mu, dtype=float)
    scale = np.sqrt(np.asarray(sigma2, dtype=float) * t_star)
    w = (mu * t_star + x_d) / scale
    z = (-mu * t_star + x_d) / scale
    return w, z


def transform_wz(e: DriftEstimate, h: HorizonSpec) -> tuple[float, float]:
    """Plug-in (w_hat, z_hat) at horizon ``h.t_star`` using the ML sigma."""
    if not e.variance_available:
        raise DomainError("the (w, z) transform needs q > 1")
    if e.sigma2_hat == 0:
        raise DegenerateSeriesError("sigma2_hat is zero: the series is a deterministic path")
    w, z = wz_from_params(e.mu_hat, e.sigma2_hat, h.x_d, h.t_star)
    return float(w), float(z)


def log_distance(n0: float, ne: float) -> float:
    """Initial log-distance log(n0 / ne) to the extinction threshold."""
    if not (ne > 0 and math.isfinite(n0) and math.isfinite(ne)):
        raise DomainError(f"threshold must be positive and finite, got {ne!r}")
    if not n0 > ne:
        raise DomainError(f"initial abundance {n0!r} is not above the threshold {ne!r}: already extinct at t=0")
    return math.log(n0 / ne)
