"""Numerically stable evaluation of the finite-horizon extinction probability.

In the transformed coordinates

    w = (mu t + x_d) / (sigma sqrt t),    z = (-mu t + x_d) / (sigma sqrt t),

the probability of hitting the extinction threshold by time ``t`` is

    G(w, z) = Phi(-w) + exp((z^2 - w^2) / 2) Phi(-z),      w + z > 0,

and Q = 1 - G is the survival probability.  The functions here evaluate G,
Q and their logarithms without overflow, underflow or catastrophic
cancellation anywhere on the admissible half-plane:

* for ``z >= z_thr`` the product ``exp((z^2-w^2)/2) Phi(-z)`` is replaced by
  ``phi(w) S7(z)`` where ``S7`` is the eight-term asymptotic Mills series
  (on the log scale, ``0 <= z < z_thr`` uses the exact Mills ratio from
  ``erfcx`` in the same product form);
* sums and differences are formed on the log scale (log-sum-exp and
  log-difference identities);
* G is computed directly for ``w >= 0`` and Q directly for ``w < 0``, the
  other side being derived from it.

Array helpers (``*_wz``) broadcast over numpy inputs and are what the
interval and simulation code use; the ``RiskCoordinates`` API wraps them for
scalar use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

from .errors import DomainError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_HALF = -math.log(2.0)
SQRT_HALF_PI = math.sqrt(0.5 * math.pi)
INV_SQRT2 = 1.0 / math.sqrt(2.0)
DEFAULT_Z_THR = 19.0

G_DIRECT = "g-direct"
Q_DIRECT = "q-direct"


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings; ``z_thr`` is where the Mills series takes over."""

    z_thr: float = DEFAULT_Z_THR

    def __post_init__(self):
        if not (math.isfinite(self.z_thr) and self.z_thr > 0):
            raise DomainError(f"z_thr must be positive, got {self.z_thr!r}")


DEFAULT_CONFIG = EvalConfig()


@dataclass(frozen=True)
class RiskCoordinates:
    """A point (w, z) of the admissible half-plane w + z > 0."""

    w: float
    z: float

    def __post_init__(self):
        w, z = float(self.w), float(self.z)
        if not (math.isfinite(w) and math.isfinite(z)):
            raise DomainError(f"coordinates must be finite, got w={w!r}, z={z!r}")
        if not w + z > 0:
            raise DomainError(f"coordinates violate w + z > 0: w={w!r}, z={z!r}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class DualScaleProb:
    """A probability carried as both log G and log Q = log(1 - G).

    ``branch`` records which of the two was computed directly.  ``loi`` marks
    loss of information: one side is not representable even on the log
    scale and carries ``-inf``.
    """

    log_g: float
    log_q: float
    branch: str = G_DIRECT
    loi: bool = False

    @classmethod
    def from_log_g(cls, log_g: float) -> "DualScaleProb":
        log_g = min(float(log_g), 0.0)
        log_q = float(log1mexp(log_g))
        return cls(log_g, log_q, G_DIRECT, not (math.isfinite(log_g) and math.isfinite(log_q)))

    @classmethod
    def from_log_q(cls, log_q: float) -> "DualScaleProb":
        log_q = min(float(log_q), 0.0)
        log_g = float(log1mexp(log_q))
        return cls(log_g, log_q, Q_DIRECT, not (math.isfinite(log_g) and math.isfinite(log_q)))

    @classmethod
    def from_logit(cls, h: float) -> "DualScaleProb":
        """Build from the log-odds log(G/Q)."""
        h = float(h)
        log_g = -float(np.logaddexp(0.0, -h))
        log_q = -float(np.logaddexp(0.0, h))
        return cls(log_g, log_q, G_DIRECT if h < 0 else Q_DIRECT, False)

    @classmethod
    def one(cls) -> "DualScaleProb":
        """G = 1 exactly (the boundary w + z = 0)."""
        return cls(0.0, -math.inf, Q_DIRECT, False)

    @property
    def g(self) -> float:
        return math.exp(self.log_g)

    @property
    def q(self) -> float:
        return math.exp(self.log_q)

    @property
    def logit(self) -> float:
        return self.log_g - self.log_q

    @property
    def log10_g(self) -> float:
        return self.log_g / math.log(10.0)

    @property
    def log10_q(self) -> float:
        return self.log_q / math.log(10.0)


def log1mexp(x):
    """log(1 - exp(x)) for x <= 0, accurate over the whole range.

    Values ``x >= 0`` (which only arise from rounding) and NaN map to -inf.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        near = np.log(-np.expm1(x))
        far = np.log1p(-np.exp(x))
        out = np.where(x > LOG_HALF, near, far)
    out = np.where(np.isnan(out) | (x >= 0), -np.inf, out)
    return out[()] if out.ndim == 0 else out


def _logaddexp(a, b):
    # max(a, b) + log1p(exp(-|a - b|)), with -inf handled
    m = np.maximum(a, b)
    with np.errstate(invalid="ignore"):
        d = -np.abs(a - b)
    d = np.where(np.isnan(d), -np.inf, d)
    return np.where(np.isneginf(m), -np.inf, m + np.log1p(np.exp(d)))


def _mills_poly(u):
    # 1 - u + 3u^2 - 15u^3 + 105u^4 - 945u^5 + 10395u^6 - 135135u^7, nested in u = 1/z^2
    p = 1.0 - 13.0 * u
    for k in (11.0, 9.0, 7.0, 5.0, 3.0, 1.0):
        p = 1.0 - k * u * p
    return p


def _mills_poly_tail(u):
    # z S7(z) - 1 = -u (1 - 3u + 15u^2 - ...), kept separate to avoid cancellation
    p = 1.0 - 13.0 * u
    for k in (11.0, 9.0, 7.0, 5.0, 3.0):
        p = 1.0 - k * u * p
    return -u * p


def mills_s7(z):
    """Eight-term asymptotic Mills series for Phi(-z)/phi(z).

    Sum over k = 0..7 of (-1)^k (2k-1)!! / z^(2k+1), nested in 1/z^2.
    Accurate to about 1e-14 relative for z >= 19.
    """
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("mills_s7 requires z > 0")
    out = _mills_poly(1.0 / (z * z)) / z
    return out[()] if out.ndim == 0 else out


def _log_phi(x):
    return -0.5 * x * x - LOG_SQRT_2PI


def _log_second_term(w, z, z_thr):
    """log of exp((z^2 - w^2)/2) Phi(-z).

    Three regimes, all algebraically identical:

    * ``z >= z_thr``: log phi(w) + log S7(z) (asymptotic Mills series);
    * ``0 <= z < z_thr``: log phi(w) + log R(z) with the Mills ratio
      R(z) = sqrt(pi/2) erfcx(z/sqrt 2), which avoids adding the two large,
      opposite-signed terms (z^2-w^2)/2 and log Phi(-z);
    * ``z < 0``: the factored form (z+w)(z-w)/2 + log Phi(-z), where
      log Phi(-z) is close to zero and nothing cancels.
    """
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    big = z >= z_thr
    mid = (z >= 0) & ~big
    zs = np.where(big, z, z_thr)
    mills = np.log(_mills_poly(1.0 / (zs * zs)) / zs)
    ratio = np.log(SQRT_HALF_PI * erfcx(np.where(mid, z, 0.0) * INV_SQRT2))
    zd = np.where(z < 0, z, 0.0)
    direct = 0.5 * (zd + w) * (zd - w) + log_ndtr(-zd)
    return np.where(big, _log_phi(w) + mills, np.where(mid, _log_phi(w) + ratio, direct))


def _check_domain(w, z):
    if np.any(~(np.isfinite(w) & np.isfinite(z))):
        raise DomainError("coordinates must be finite")
    if np.any(~(w + z > 0)):
        raise DomainError("coordinates violate w + z > 0")


def log_g_wz(w, z, z_thr: float = DEFAULT_Z_THR, *, check: bool = True):
    """log G(w, z) by log-sum-exp; broadcasts over arrays."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if check:
        _check_domain(w, z)
    a = log_ndtr(-w)
    b = _log_second_term(w, z, z_thr)
    out = np.minimum(_logaddexp(a, b), 0.0)
    return out[()] if out.ndim == 0 else out


def log_q_wz(w, z, z_thr: float = DEFAULT_Z_THR, *, check: bool = True):
    """log Q(w, z) by the log-difference identity; broadcasts over arrays."""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    if check:
        _check_domain(w, z)
    c = log_ndtr(w)
    b = _log_second_term(w, z, z_thr)
    with np.errstate(invalid="ignore"):
        out = c + log1mexp(b - c)
    out = np.where(np.isnan(out), -np.inf, out)
    return out[()] if out.ndim == 0 else out


def hybrid_wz(w, z, z_thr: float = DEFAULT_Z_THR, *, check: bool = True):
    """Vectorised hybrid evaluation.

    Returns ``(log_g, log_q, g_direct)`` where ``g_direct`` is a boolean
    array (True where w >= 0 and G was computed directly).
    """
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    if check:
        _check_domain(w, z)
    g_direct = w >= 0
    b = _log_second_term(w, z, z_thr)
    # G side: log-sum-exp of Phi(-w) and the second term
    lg = np.minimum(_logaddexp(log_ndtr(-w), b), 0.0)
    # Q side: log-difference from Phi(w)
    c = log_ndtr(w)
    with np.errstate(invalid="ignore"):
        lq = c + log1mexp(b - c)
    lq = np.minimum(np.where(np.isnan(lq), -np.inf, lq), 0.0)
    log_g = np.where(g_direct, lg, log1mexp(lq))
    log_q = np.where(g_direct, log1mexp(lg), lq)
    return log_g, log_q, g_direct


def g_linear_wz(w, z, z_thr: float = DEFAULT_Z_THR):
    """G on the linear scale with the Mills switch; underflows to 0 in the far right tail."""
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    _check_domain(w, z)
    big = z >= z_thr
    zs = np.where(big, z, z_thr)
    mills = np.exp(_log_phi(w)) * (_mills_poly(1.0 / (zs * zs)) / zs)
    zd = np.where(big, 0.0, z)
    direct = np.exp(0.5 * (zd + w) * (zd - w)) * ndtr(-zd)
    out = np.minimum(ndtr(-w) + np.where(big, mills, direct), 1.0)
    return out[()] if out.ndim == 0 else out


def g_linear(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """G(w, z) on the linear scale."""
    return float(g_linear_wz(c.w, c.z, cfg.z_thr))


def log_g(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """log G(w, z); -inf only when log G itself is not representable."""
    return float(log_g_wz(c.w, c.z, cfg.z_thr))


def log_q(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """log Q(w, z) = log(1 - G(w, z))."""
    return float(log_q_wz(c.w, c.z, cfg.z_thr))


def eval_hybrid(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> DualScaleProb:
    """Evaluate G and Q together, computing the well-conditioned side directly."""
    lg, lq, gd = hybrid_wz(c.w, c.z, cfg.z_thr)
    lg, lq = float(lg), float(lq)
    loi = not (math.isfinite(lg) and math.isfinite(lq))
    return DualScaleProb(lg, lq, G_DIRECT if bool(gd) else Q_DIRECT, loi)


def hybrid_or_one(w, z, z_thr: float = DEFAULT_Z_THR):
    """Like :func:`hybrid_wz` but saturates at G = 1 where w + z <= 0.

    Used for interval corners, which may fall outside the admissible region.
    """
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    ok = w + z > 0
    ws = np.where(ok, w, 1.0)
    zs = np.where(ok, z, 1.0)
    lg, lq, gd = hybrid_wz(ws, zs, z_thr, check=False)
    lg = np.where(ok, lg, 0.0)
    lq = np.where(ok, lq, -np.inf)
    gd = np.where(ok, gd, False)
    return lg, lq, gd


def format_prob(p: DualScaleProb, lo: float = 1e-4, hi: float = 0.9999, digits: int = 3) -> str:
    """Format a probability, switching to ``a e b`` / ``1-a e b`` notation in the tails.

    The scientific form is built from log10 so it works far below the
    double-precision range.
    """
    if p.log_g < math.log(lo):
        return _sci_from_log(p.log_g, digits)
    if p.log_q < math.log(1.0 - hi):
        return "1-" + _sci_from_log(p.log_q, digits)
    return f"{p.g:.{digits}g}"


def _sci_from_log(log_x: float, digits: int) -> str:
    if log_x == -math.inf:
        return "0"
    l10 = log_x / math.log(10.0)
    e = math.floor(l10)
    m = 10.0 ** (l10 - e)
    m = float(f"{m:.{digits - 1}f}")
    if m >= 10.0:
        m /= 10.0
        e += 1
    return f"{m:.{digits - 1}f}e{e:+03d}"
