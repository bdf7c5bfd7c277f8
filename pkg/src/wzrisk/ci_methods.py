"""Point estimate and confidence intervals for the extinction probability.

Four constructions are provided:

``wz``
    Exact equal-tailed intervals for w and z from the noncentral-t law of the
    plug-in coordinates, combined by evaluating G at the diagonally opposite
    corners (w_hi, z_lo) and (w_lo, z_hi) of the confidence rectangle.
``delta_logit``
    First-order delta method on the logit of G with a Wald interval.
``bootstrap``
    Percentile parametric bootstrap from the exact sampling laws of
    (mu_hat, sigma2_hat).
``tmu``
    Perturbs only the drift component and treats the variance as known.

Every endpoint is carried as a :class:`DualScaleProb`, so intervals far in
either tail are reported without underflow.  The ``*_arr`` helpers are the
vectorised kernels used by the coverage harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, MethodInapplicableError
from .estimate import DriftEstimate, HorizonSpec, transform_wz, wz_from_params
from .nct import invert_delta_arr
from .stable_eval import (
    DEFAULT_CONFIG,
    DualScaleProb,
    EvalConfig,
    G_DIRECT,
    Q_DIRECT,
    RiskCoordinates,
    _log_phi,
    _log_second_term,
    eval_hybrid,
    hybrid_or_one,
    hybrid_wz,
)

METHODS = ("wz", "delta_logit", "bootstrap", "tmu")
DEFAULT_B = 2000


@dataclass(frozen=True)
class IntervalResult:
    """Point estimate and equal-tailed interval, all on the dual log scale."""

    point: DualScaleProb
    lower: DualScaleProb
    upper: DualScaleProb
    alpha: float
    method: str

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")

    @property
    def width(self) -> float:
        return interval_width(self.lower, self.upper)

    def contains_log(self, log_g: float, log_q: float, use_q: bool) -> bool:
        """Whether a true value lies inside, compared on log G or on log Q."""
        if use_q:
            return self.upper.log_q <= log_q <= self.lower.log_q
        return self.lower.log_g <= log_g <= self.upper.log_g


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_estimate(e: DriftEstimate):
    if not e.q > 1 or not e.variance_available:
        raise DomainError("interval construction needs q > 1")


def interval_width(lower: DualScaleProb, upper: DualScaleProb) -> float:
    """upper - lower on the probability scale, formed on whichever side avoids cancellation."""
    if upper.log_g < -math.log(2.0):
        return math.exp(upper.log_g) - math.exp(lower.log_g)
    return math.exp(lower.log_q) - math.exp(upper.log_q)


def _dual(lg, lq, gd) -> DualScaleProb:
    lg, lq = float(lg), float(lq)
    return DualScaleProb(lg, lq, G_DIRECT if bool(gd) else Q_DIRECT,
                         not (math.isfinite(lg) and math.isfinite(lq)))


# ---------------------------------------------------------------------------
# point estimate


def point_estimate(e: DriftEstimate, h: HorizonSpec, cfg: EvalConfig = DEFAULT_CONFIG) -> DualScaleProb:
    """G at the plug-in coordinates (w_hat, z_hat)."""
    w, z = transform_wz(e, h)
    return eval_hybrid(RiskCoordinates(w, z), cfg)


# ---------------------------------------------------------------------------
# w-z method


def _noncentral_scale(q, t_q, t_star):
    return np.sqrt((q - 1) / q) * np.sqrt(t_q / t_star)


def ci_w_arr(w_hat, q, t_q, t_star, alpha):
    """Vectorised equal-tailed (1 - alpha) bounds for a coordinate; returns (lo, hi)."""
    w_hat = np.asarray(w_hat, dtype=float)
    t_obs = w_hat * _noncentral_scale(q, t_q, t_star)
    targets = np.array([1.0 - alpha / 2.0, alpha / 2.0]).reshape((2,) + (1,) * w_hat.ndim)
    d = invert_delta_arr(t_obs[None, ...], q - 1, targets)
    back = math.sqrt(t_star / t_q)
    return d[0] * back, d[1] * back


def ci_w(w_hat: float, q: int, t_q: float, t_star: float, alpha: float) -> tuple[float, float]:
    """Equal-tailed (1 - alpha) confidence bounds for w (or, identically, z).

    With t_obs = w_hat sqrt((q-1)/q) sqrt(t_q/t*), the lower noncentrality
    solves P(T >= t_obs) = alpha/2 and the upper solves P(T <= t_obs) = alpha/2
    for T ~ t(delta, q-1); both are mapped back by sqrt(t*/t_q).
    """
    _check_alpha(alpha)
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q!r}")
    lo, hi = ci_w_arr(float(w_hat), q, t_q, t_star, alpha)
    return float(lo), float(hi)


def wz_bounds_arr(w_hat, z_hat, q, t_q, t_star, alpha):
    """Confidence bounds for both coordinates in one solver pass: (w_lo, w_hi, z_lo, z_hi)."""
    w_hat, z_hat = np.broadcast_arrays(np.asarray(w_hat, dtype=float), np.asarray(z_hat, dtype=float))
    lo, hi = ci_w_arr(np.stack([w_hat, z_hat]), q, t_q, t_star, alpha)
    return lo[0], hi[0], lo[1], hi[1]


def ci_wz_arr(w_hat, z_hat, q, t_q, t_star, alpha, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Vectorised w-z interval.

    Returns ``(lower, upper)``, each a tuple ``(log_g, log_q, g_direct)``.
    Corners outside the admissible half-plane saturate at G = 1.
    """
    w_lo, w_hi, z_lo, z_hi = wz_bounds_arr(w_hat, z_hat, q, t_q, t_star, alpha)
    lower = hybrid_or_one(w_hi, z_lo, z_thr)
    upper = hybrid_or_one(w_lo, z_hi, z_thr)
    return lower, upper


def ci_wz_coords(w_hat: float, z_hat: float, q: int, t_q: float, t_star: float, alpha: float,
                 cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """w-z interval from coordinates directly (synthetic estimates)."""
    _check_alpha(alpha)
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q!r}")
    point = eval_hybrid(RiskCoordinates(w_hat, z_hat), cfg)
    lower, upper = ci_wz_arr(w_hat, z_hat, q, t_q, t_star, alpha, cfg.z_thr)
    return IntervalResult(point, _dual(*lower), _dual(*upper), alpha, "wz")


def ci_wz(e: DriftEstimate, h: HorizonSpec, alpha: float = 0.05,
          cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """The w-z interval: G at (w_hi, z_lo) and (w_lo, z_hi)."""
    _check_estimate(e)
    w, z = transform_wz(e, h)
    return ci_wz_coords(w, z, e.q, e.t_q, h.t_star, alpha, cfg)


# ---------------------------------------------------------------------------
# delta / logit


def logit_partials_arr(mu, sigma2, x_d, t_star, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Partials of H = logit G with respect to (mu, sigma^2), formed on the log scale.

    Returns ``(dH_dmu, dH_dsigma2, log_g, log_q)``.  Dividing by G(1 - G) is
    done by subtracting log G + log Q before exponentiating, so the ratios
    stay finite wherever both logs are.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    w, z = wz_from_params(mu, sigma2, x_d, t_star)
    lg, lq, _ = hybrid_wz(w, z, z_thr, check=False)
    b = _log_second_term(w, z, z_thr)
    denom = lg + lq
    sigma = np.sqrt(sigma2)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        e_b = np.exp(b - denom)
        e_phi = np.exp(_log_phi(w) - denom)
        d_mu = -(2.0 * x_d / sigma2) * e_b
        d_s2 = (x_d / (sigma2 * sigma * math.sqrt(t_star))) * e_phi + (2.0 * mu * x_d / (sigma2 * sigma2)) * e_b
    return d_mu, d_s2, lg, lq


def partials_g(mu: float, sigma2: float, x_d: float, t_star: float) -> tuple[float, float]:
    """(dG/dmu, dG/dsigma^2) on the linear scale."""
    w, z = wz_from_params(mu, sigma2, x_d, t_star)
    b = float(_log_second_term(w, z, DEFAULT_CONFIG.z_thr))
    sigma = math.sqrt(sigma2)
    e_b = math.exp(b)
    d_mu = -(2.0 * x_d / sigma2) * e_b
    d_s2 = (x_d / (sigma**3 * math.sqrt(t_star))) * math.exp(float(_log_phi(w))) + (2.0 * mu * x_d / sigma2**2) * e_b
    return d_mu, d_s2


def delta_logit_arr(mu_hat, sigma2_hat, x_d, t_star, q, t_q, alpha, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Vectorised delta/logit interval on the logit scale.

    Returns ``(h_hat, h_lo, h_hi, ok)``; ``ok`` is False where the point
    estimate is 0 or 1 at working precision (log G or log Q not finite).
    """
    d_mu, d_s2, lg, lq = logit_partials_arr(mu_hat, sigma2_hat, x_d, t_star, z_thr)
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)
    var_mu = sigma2_hat / t_q
    var_s2 = 2.0 * sigma2_hat**2 * (q - 1) / q**2
    with np.errstate(over="ignore", invalid="ignore"):
        var_h = d_mu**2 * var_mu + d_s2**2 * var_s2
        half = special.ndtri(1.0 - alpha / 2.0) * np.sqrt(var_h)
        h_hat = lg - lq
        ok = np.isfinite(lg) & np.isfinite(lq) & ~np.isnan(half)
        h_lo = h_hat - half
        h_hi = h_hat + half
    return h_hat, h_lo, h_hi, ok


def logit_to_logs(h):
    """(log G, log Q) from the log-odds h."""
    h = np.asarray(h, dtype=float)
    return -np.logaddexp(0.0, -h), -np.logaddexp(0.0, h)


def ci_delta_logit(e: DriftEstimate, h: HorizonSpec, alpha: float = 0.05,
                   cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """Wald interval for logit G using first-order delta variances, mapped back by the inverse logit."""
    _check_estimate(e)
    _check_alpha(alpha)
    point = point_estimate(e, h, cfg)
    h_hat, h_lo, h_hi, ok = delta_logit_arr(e.mu_hat, e.sigma2_hat, h.x_d, h.t_star, e.q, e.t_q, alpha, cfg.z_thr)
    if not bool(ok):
        raise MethodInapplicableError(
            f"delta/logit needs 0 < G < 1 at working precision (log G = {point.log_g}, log Q = {point.log_q})"
        )
    return IntervalResult(point, DualScaleProb.from_logit(float(h_lo)), DualScaleProb.from_logit(float(h_hi)),
                          alpha, "delta_logit")


# ---------------------------------------------------------------------------
# percentile parametric bootstrap


def percentile_ranks(alpha: float, B: int) -> tuple[int, int]:
    """1-based order-statistic ranks ceil(alpha/2 B) and ceil((1 - alpha/2) B)."""
    lo = math.ceil(round(alpha / 2.0 * B, 9))
    hi = math.ceil(round((1.0 - alpha / 2.0) * B, 9))
    return max(lo, 1), min(hi, B)


def bootstrap_draws(mu_hat, sigma2_hat, q, t_q, normals, chisq):
    """Map standard normal and chi^2_{q-1} draws to bootstrap (mu, sigma^2)."""
    mu_hat = np.asarray(mu_hat, dtype=float)[..., None]
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)[..., None]
    mu_b = mu_hat + np.sqrt(sigma2_hat / t_q) * normals
    s2_b = sigma2_hat / q * chisq
    return mu_b, s2_b


def bootstrap_select_arr(mu_b, s2_b, x_d, t_star, alpha, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Percentile endpoints along the last axis of bootstrap replicates.

    Replicates are ranked by log-odds, which orders G exactly even where G
    or Q underflows.  Returns ``(lower, upper)`` as ``(log_g, log_q, g_direct)``.
    """
    B = mu_b.shape[-1]
    w, z = wz_from_params(mu_b, s2_b, x_d, t_star)
    lg, lq, gd = hybrid_wz(w, z, z_thr, check=False)
    key = lg - lq
    r_lo, r_hi = percentile_ranks(alpha, B)
    part = np.argpartition(key, (r_lo - 1, r_hi - 1), axis=-1)
    out = []
    for r in (r_lo, r_hi):
        i = part[..., r - 1 : r]
        out.append(tuple(np.take_along_axis(a, i, axis=-1)[..., 0] for a in (lg, lq, gd)))
    return out[0], out[1]


def ci_bootstrap(e: DriftEstimate, h: HorizonSpec, alpha: float = 0.05, B: int = DEFAULT_B,
                 seed: int = 0, cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """Percentile parametric bootstrap interval; deterministic for a fixed seed."""
    _check_estimate(e)
    _check_alpha(alpha)
    if B < 100:
        raise DomainError(f"B must be at least 100, got {B!r}")
    point = point_estimate(e, h, cfg)
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal(B)
    chisq = rng.chisquare(e.q - 1, B)
    mu_b, s2_b = bootstrap_draws(e.mu_hat, e.sigma2_hat, e.q, e.t_q, normals, chisq)
    lower, upper = bootstrap_select_arr(mu_b, s2_b, h.x_d, h.t_star, alpha, cfg.z_thr)
    return IntervalResult(point, _dual(*lower), _dual(*upper), alpha, "bootstrap")


# ---------------------------------------------------------------------------
# TMU


def tmu_arr(mu_hat, sigma2_hat, x_d, t_star, t_q, alpha, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Vectorised TMU interval; returns ``(lower, upper)`` as ``(log_g, log_q, g_direct)``.

    With U = -mu sqrt(t*)/sigma and V = x_d/(sigma sqrt(t*)), G(U, V) equals
    G(w = V - U, z = V + U) and increases in U, so shifting U down gives the
    lower bound.
    """
    sigma = np.sqrt(np.asarray(sigma2_hat, dtype=float))
    u = -np.asarray(mu_hat, dtype=float) * math.sqrt(t_star) / sigma
    v = x_d / (sigma * math.sqrt(t_star))
    shift = special.ndtri(1.0 - alpha / 2.0) * math.sqrt(t_star / t_q)
    lower = hybrid_wz(v - (u - shift), v + (u - shift), z_thr, check=False)
    upper = hybrid_wz(v - (u + shift), v + (u + shift), z_thr, check=False)
    return lower, upper


def g_uv(u, v, z_thr: float = DEFAULT_CONFIG.z_thr):
    """log G in (U, V) coordinates: Phi(U - V) + exp(2UV) Phi(-(U + V))."""
    lg, _, _ = hybrid_wz(np.asarray(v) - u, np.asarray(v) + u, z_thr)
    return lg


def ci_tmu(e: DriftEstimate, h: HorizonSpec, alpha: float = 0.05,
           cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """Known-variance interval that perturbs only the drift component."""
    _check_estimate(e)
    _check_alpha(alpha)
    point = point_estimate(e, h, cfg)
    lower, upper = tmu_arr(e.mu_hat, e.sigma2_hat, h.x_d, h.t_star, e.t_q, alpha, cfg.z_thr)
    return IntervalResult(point, _dual(*lower), _dual(*upper), alpha, "tmu")


def compute_interval(method: str, e: DriftEstimate, h: HorizonSpec, alpha: float = 0.05,
                     B: int = DEFAULT_B, seed: int = 0, cfg: EvalConfig = DEFAULT_CONFIG) -> IntervalResult:
    """Dispatch by method tag."""
    if method == "wz":
        return ci_wz(e, h, alpha, cfg)
    if method == "delta_logit":
        return ci_delta_logit(e, h, alpha, cfg)
    if method == "bootstrap":
        return ci_bootstrap(e, h, alpha, B, seed, cfg)
    if method == "tmu":
        return ci_tmu(e, h, alpha, cfg)
    raise DomainError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
