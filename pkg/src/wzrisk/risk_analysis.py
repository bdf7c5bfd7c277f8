"""Analytic structure of the estimator pair (w_hat, z_hat) and of G_hat.

* design constants A, D, k = A/D and c(q) = D/t* governing the sampling
  covariance  Sigma = c(q) [[k + w^2, -k + wz], [-k + wz, k + z^2]];
* the closed-form correlation of (w_hat, z_hat);
* the gradient of G and the slope of its level curves;
* delta-method and mixture-representation variances of G_hat;
* CI-width landscapes, horizon trajectories and the required observation
  span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .ci_methods import ci_wz_arr
from .errors import ConvergenceError, DomainError
from .estimate import wz_from_params
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
    _mills_poly_tail,
    hybrid_or_one,
    hybrid_wz,
    log_g_wz,
)

SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


class UnsatisfiableError(ConvergenceError):
    """No observation span up to the cap meets the management threshold."""


# ---------------------------------------------------------------------------
# design constants and correlation


@dataclass(frozen=True)
class DesignConstants:
    """Design-dependent constants of the (w_hat, z_hat) covariance."""

    c_q: float
    A: float
    D: float
    k: float
    s2: float
    q: int = 0
    t_q: float = 0.0
    t_star: float = 0.0

    @property
    def sigma_scale(self) -> float:
        return self.c_q


def _one_minus_f(q: float) -> float:
    """1 - (q - 3) r_q^2 / 2 with r_q = Gamma((q-2)/2) / Gamma((q-1)/2), without cancellation.

    With x = (q - 2)/2, log Gamma(x + 1/2) - log Gamma(x) = log(x)/2 + s(x); for
    large x the correction s(x) comes from its asymptotic series, so that
    log f = log1p(-1/(2x)) - 2 s(x) is formed without subtracting large
    log-Gamma values.
    """
    x = 0.5 * (q - 2.0)
    if x >= 30.0:
        ix = 1.0 / x
        ix2 = ix * ix
        s = ix * (-1.0 / 8.0 + ix2 * (1.0 / 192.0 + ix2 * (-1.0 / 640.0 + ix2 * (17.0 / 14336.0))))
    else:
        s = special.gammaln(x + 0.5) - special.gammaln(x) - 0.5 * math.log(x)
    log_f = math.log1p(-0.5 / x) - 2.0 * s
    return -math.expm1(log_f)


def design_constants(q: int, t_q: float, t_star: float) -> DesignConstants:
    """A, D, k = A/D and c(q) = D/t* for q increments over span t_q at horizon t*."""
    if not q > 3:
        raise DomainError(f"design constants need q > 3, got {q!r}")
    if not (t_q > 0 and t_star > 0):
        raise DomainError("t_q and t_star must be positive")
    g = _one_minus_f(q)  # (q - 3) * [1/(q-3) - r_q^2/2]
    A = q * t_star**2 / ((q - 3) * t_q)
    D = q * t_star * g / (q - 3)
    return DesignConstants(c_q=D / t_star, A=A, D=D, k=A / D, s2=t_star / t_q, q=q, t_q=t_q, t_star=t_star)


def covariance_wz(w, z, d: DesignConstants):
    """Sampling covariance entries (var_w, cov_wz, var_z) of (w_hat, z_hat)."""
    return d.c_q * (d.k + w * w), d.c_q * (-d.k + w * z), d.c_q * (d.k + z * z)


def corr_wz(w: float, z: float, d: DesignConstants) -> float:
    """Correlation of (w_hat, z_hat): (-k + wz) / sqrt((k + w^2)(k + z^2))."""
    RiskCoordinates(w, z)
    k = d.k
    return (-k + w * z) / math.sqrt((k + w * w) * (k + z * z))


# ---------------------------------------------------------------------------
# gradient and contour slope


def _mills_ratio(z):
    """R(z) = Phi(-z) / phi(z) for z >= 0 (series beyond the switch)."""
    return SQRT_HALF_PI * special.erfcx(z / math.sqrt(2.0))


def _tail_terms(z, z_thr):
    """(R(z), z R(z) - 1) for z >= 0, the second formed without cancellation past z_thr."""
    big = z >= z_thr
    zs = np.where(big, z, z_thr)
    u = 1.0 / (zs * zs)
    r = np.where(big, (1.0 + _mills_poly_tail(u)) / zs, _mills_ratio(np.maximum(z, 0.0)))
    tail = np.where(big, _mills_poly_tail(u), np.maximum(z, 0.0) * _mills_ratio(np.maximum(z, 0.0)) - 1.0)
    return r, tail


def gradient_wz(w, z, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Vectorised (G_w, G_z).

    G_w = -phi(w) - w e^b and G_z = e^((z^2 - w^2)/2) (z Phi(-z) - phi(z)) with
    e^b = e^((z^2 - w^2)/2) Phi(-z).  For z >= 0 both are written as phi(w)
    times functions of the Mills ratio so that the near-cancelling pieces
    (1 - z R(z)) are formed directly.
    """
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    phi_w = np.exp(_log_phi(w))
    pos = z >= 0
    r, tail = _tail_terms(z, z_thr)
    gw_pos = -phi_w * ((-tail) + (w + z) * r)
    gz_pos = phi_w * tail
    e_b = np.exp(_log_second_term(w, np.where(pos, -1.0, z), z_thr))
    gw_neg = -phi_w - w * e_b
    gz_neg = z * e_b - phi_w
    gw = np.where(pos, gw_pos, gw_neg)
    gz = np.where(pos, gz_pos, gz_neg)
    return (gw[()], gz[()]) if gw.ndim == 0 else (gw, gz)


def gradient_g(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> tuple[float, float]:
    """(dG/dw, dG/dz) at an admissible point."""
    gw, gz = gradient_wz(c.w, c.z, cfg.z_thr)
    return float(gw), float(gz)


def contour_slope_wz(w, z, z_thr: float = DEFAULT_CONFIG.z_thr):
    """Slope dz/dw = -G_w / G_z of the level curve through (w, z), free of phi(w) underflow."""
    w, z = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(z, dtype=float))
    pos = z >= 0
    r, tail = _tail_terms(z, z_thr)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_pos = -1.0 - (w + z) * r / (-tail)
        # z < 0: divide through by e^b; 1/R(z) = exp(log phi(w) - b)
        inv_r = np.exp(_log_phi(w) - _log_second_term(w, np.where(pos, -1.0, z), z_thr))
        s_neg = (inv_r + w) / (z - inv_r)
    out = np.where(pos, s_pos, s_neg)
    return out[()] if out.ndim == 0 else out


def contour_slope(c: RiskCoordinates, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    return float(contour_slope_wz(c.w, c.z, cfg.z_thr))


# ---------------------------------------------------------------------------
# variances of G_hat


def var_g_delta(c: RiskCoordinates, d: DesignConstants, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """Delta-method variance grad G^T Sigma grad G."""
    gw, gz = gradient_wz(c.w, c.z, cfg.z_thr)
    vw, cwz, vz = covariance_wz(c.w, c.z, d)
    return float(gw * gw * vw + 2.0 * gw * gz * cwz + gz * gz * vz)


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings for the mixture variance.

    ``method`` is ``"general"`` (adaptive composite Gauss-Legendre against
    the normal weight over Z, applied to the exact G),
    ``"closed"`` (closed forms valid for z >> 0, where G ~ Phi(-w)) or
    ``"auto"`` (currently the general rule everywhere).
    """

    inner_panels: int = 4
    outer_nodes: int = 128
    tol: float = 1e-10
    max_inner_panels: int = 1024
    max_outer_nodes: int = 2048
    method: str = "auto"

    def __post_init__(self):
        if self.method not in ("auto", "general", "closed"):
            raise DomainError(f"unknown quadrature method {self.method!r}")


DEFAULT_QUADRATURE = QuadratureSpec()


def _outer_rule(q: int, n: int):
    """Nodes lambda_j and normalised weights for Lambda = sqrt(q / chi^2_{q-1}).

    Gauss-Legendre in log(chi^2) between the 1e-16 quantiles.
    """
    nu = q - 1
    chi = stats.chi2(nu)
    lo, hi = math.log(chi.ppf(1e-16)), math.log(chi.isf(1e-16))
    x, wts = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    y = np.exp(t)
    logdens = chi.logpdf(y) + t  # density in log(y)
    wts = wts * np.exp(logdens - logdens.max())
    wts = wts / wts.sum()
    return np.sqrt(q / y), wts


INNER_HALF_RANGE = 9.0  # |Z| beyond this carries < 1e-18 of the normal mass
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _inner_rule(w, s, panels):
    """Composite Gauss-Legendre rule for E_Z[.] with Z ~ N(0, 1).

    The range [-9, 9] is cut into ``panels`` equal panels, plus a break at
    Z = -w/s where Phi(-lambda(w + sZ)) switches from ~1 to ~0.
    """
    edges = np.linspace(-INNER_HALF_RANGE, INNER_HALF_RANGE, panels + 1)
    if s > 0 and abs(w / s) < INNER_HALF_RANGE:
        edges = np.union1d(edges, [-w / s])
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * _GL_NODES[None, :]
    wts = half[:, None] * _GL_WEIGHTS[None, :] * np.exp(_log_phi(nodes))
    nodes, wts = nodes.ravel(), wts.ravel()
    return nodes, wts / wts.sum()


def _inner_general(lam, w, z, s, panels, z_thr):
    zn, zw = _inner_rule(w, s, panels)
    ww = lam[:, None] * (w + s * zn[None, :])
    zz = lam[:, None] * (z - s * zn[None, :])
    lg, _, _ = hybrid_wz(ww, zz, z_thr, check=False)
    g = np.exp(lg)
    return g @ zw, (g * g) @ zw


def _inner_closed(lam, w, s):
    den = np.sqrt(1.0 + lam * lam * s * s)
    a = -lam * w / den
    rho = lam * lam * s * s / (den * den)
    m1 = special.ndtr(a)
    # Phi_2(h, h; rho) = Phi(h) - 2 T(h, sqrt((1 - rho)/(1 + rho)))
    m2 = m1 - 2.0 * special.owens_t(a, np.sqrt((1.0 - rho) / (1.0 + rho)))
    return m1, m2


def mixture_moments(c: RiskCoordinates, q: int, t_q: float, t_star: float,
                    quadrature: QuadratureSpec = DEFAULT_QUADRATURE,
                    cfg: EvalConfig = DEFAULT_CONFIG) -> tuple[float, float]:
    """(E[G_hat], E[G_hat^2]) under the mixture representation."""
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q!r}")
    s = math.sqrt(t_star / t_q)

    def inner(lam):
        if quadrature.method == "closed":
            return _inner_closed(lam, c.w, s)
        n = quadrature.inner_panels
        m1, m2 = _inner_general(lam, c.w, c.z, s, n, cfg.z_thr)
        err = math.inf
        while True:
            if 2 * n > quadrature.max_inner_panels:
                raise ConvergenceError("inner quadrature over Z did not converge",
                                       {"panels": n, "w": c.w, "z": c.z, "achieved": err})
            n *= 2
            n1, n2 = _inner_general(lam, c.w, c.z, s, n, cfg.z_thr)
            err = max(np.max(np.abs(n1 - m1)), np.max(np.abs(n2 - m2)))
            m1, m2 = n1, n2
            if err <= quadrature.tol:
                return m1, m2

    def outer(n):
        lam, wts = _outer_rule(q, n)
        m1, m2 = inner(lam)
        return float(wts @ m1), float(wts @ m2)

    n = quadrature.outer_nodes
    e1, e2 = outer(n)
    err = math.inf
    while True:
        if 2 * n > quadrature.max_outer_nodes:
            raise ConvergenceError("outer quadrature did not converge", {"nodes": n, "q": q, "achieved": err})
        n *= 2
        f1, f2 = outer(n)
        err = max(abs(f1 - e1), abs(f2 - e2))
        e1, e2 = f1, f2
        if err <= quadrature.tol:
            return e1, e2


def var_g_mixture(c: RiskCoordinates, q: int, t_q: float, t_star: float,
                  quadrature: QuadratureSpec = DEFAULT_QUADRATURE,
                  cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """Var(G_hat) = E_Lambda[M2] - (E_Lambda[M1])^2 from the mixture representation."""
    e1, e2 = mixture_moments(c, q, t_q, t_star, quadrature, cfg)
    return max(e2 - e1 * e1, 0.0)


# ---------------------------------------------------------------------------
# CI-width landscapes and horizon trajectories


def log_width(lower_lg, lower_lq, upper_lg, upper_lq):
    """log(upper - lower) on the probability scale, formed on the better-conditioned side."""
    from .stable_eval import log1mexp

    with np.errstate(invalid="ignore"):
        via_g = upper_lg + log1mexp(lower_lg - upper_lg)
        via_q = lower_lq + log1mexp(upper_lq - lower_lq)
    return np.where(upper_lg < -math.log(2.0), via_g, via_q)


@dataclass(frozen=True)
class GridCell:
    w: float
    z: float
    point: DualScaleProb | None
    width: float
    masked: bool


def ci_width_grid(w_values, z_values, q: int, t_q: float, t_star: float, alpha: float = 0.05,
                  cfg: EvalConfig = DEFAULT_CONFIG) -> list[GridCell]:
    """w-z CI width at synthetic estimates (w_hat, z_hat) := (w, z) over a grid.

    Cells with w + z <= 0 are returned masked.
    """
    W, Z = np.meshgrid(np.asarray(w_values, dtype=float), np.asarray(z_values, dtype=float), indexing="ij")
    W, Z = W.ravel(), Z.ravel()
    ok = W + Z > 0
    widths = np.full(W.shape, np.nan)
    lg = np.full(W.shape, np.nan)
    lq = np.full(W.shape, np.nan)
    gd = np.zeros(W.shape, dtype=bool)
    if ok.any():
        lower, upper = ci_wz_arr(W[ok], Z[ok], q, t_q, t_star, alpha, cfg.z_thr)
        widths[ok] = np.exp(log_width(lower[0], lower[1], upper[0], upper[1]))
        lg[ok], lq[ok], gd[ok] = hybrid_wz(W[ok], Z[ok], cfg.z_thr, check=False)
    cells = []
    for i in range(W.size):
        if ok[i]:
            p = DualScaleProb(float(lg[i]), float(lq[i]), G_DIRECT if gd[i] else Q_DIRECT,
                              not (np.isfinite(lg[i]) and np.isfinite(lq[i])))
            cells.append(GridCell(float(W[i]), float(Z[i]), p, float(widths[i]), False))
        else:
            cells.append(GridCell(float(W[i]), float(Z[i]), None, math.nan, True))
    return cells


@dataclass(frozen=True)
class TrajectoryRow:
    t_star: float
    w: float
    z: float
    point: DualScaleProb
    lower: DualScaleProb
    upper: DualScaleProb
    width: float


def horizon_trajectory(mu: float, sigma2: float, x_d: float, q: int, t_q: float, horizons,
                       alpha: float = 0.05, cfg: EvalConfig = DEFAULT_CONFIG) -> list[TrajectoryRow]:
    """G and the w-z CI width along increasing horizons, estimates set equal to the truth."""
    rows = []
    for t_star in horizons:
        if not t_star > 0:
            raise DomainError(f"horizons must be positive, got {t_star!r}")
        w, z = (float(v) for v in wz_from_params(mu, sigma2, x_d, t_star))
        lg, lq, gd = hybrid_wz(w, z, cfg.z_thr)
        lower, upper = ci_wz_arr(w, z, q, t_q, t_star, alpha, cfg.z_thr)
        lw = float(log_width(lower[0], lower[1], upper[0], upper[1]))
        rows.append(TrajectoryRow(
            float(t_star), w, z,
            DualScaleProb(float(lg), float(lq), G_DIRECT if gd else Q_DIRECT),
            _dual(lower), _dual(upper), math.exp(lw),
        ))
    return rows


def _dual(t) -> DualScaleProb:
    lg, lq, gd = (float(t[0]), float(t[1]), bool(t[2]))
    return DualScaleProb(lg, lq, G_DIRECT if gd else Q_DIRECT, not (math.isfinite(lg) and math.isfinite(lq)))


# ---------------------------------------------------------------------------
# required observation span


SPAN_CAP = 10**6


@dataclass(frozen=True)
class SpanRequest:
    """Inputs of the required-span problem."""

    g_true: float
    z_fixed: float
    t_star: float
    alpha: float = 0.05
    g_target: float = 0.1

    def __post_init__(self):
        for name in ("g_true", "alpha", "g_target"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")
        if not (self.t_star > 0 and math.isfinite(self.z_fixed)):
            raise DomainError("t_star must be positive and z_fixed finite")


def solve_w_for_g(g: float, z: float, tol: float = 1e-12, cfg: EvalConfig = DEFAULT_CONFIG) -> float:
    """The w with G(w, z) = g, by bisection on log G (G is strictly decreasing in w)."""
    if not (0.0 < g < 1.0):
        raise DomainError(f"g must lie in (0, 1), got {g!r}")
    target = math.log(g)
    lo = math.nextafter(-z, math.inf)
    hi = abs(z) + 1.0
    while float(log_g_wz(hi, z, cfg.z_thr)) > target:
        hi *= 2.0
        if hi > 1e154:
            raise ConvergenceError("could not bracket w", {"g": g, "z": z})
    for _ in range(4000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = float(log_g_wz(mid, z, cfg.z_thr)) if mid + z > 0 else 0.0
        if abs(val - target) <= tol * max(1.0, abs(target)) and hi - lo < 1e-12 * max(1.0, abs(mid)):
            return mid
        if val > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def span_upper_bound(t_q, w: float, z: float, t_star: float, alpha: float, z_thr: float = DEFAULT_CONFIG.z_thr):
    """log G(w_L, z_U): the upper confidence bound for G with unit sampling over span t_q.

    Vectorised over integer spans ``t_q >= 2``.
    """
    t_q = np.asarray(t_q, dtype=float)
    nu = t_q - 1.0
    scale = np.sqrt(nu / t_star)
    d_low = invert_delta_arr(scale * w, nu, 1.0 - alpha / 2.0)
    d_high = invert_delta_arr(scale * z, nu, alpha / 2.0)
    back = np.sqrt(t_star / t_q)
    lg, _, _ = hybrid_or_one(d_low * back, d_high * back, z_thr)
    return lg


def required_span(r: SpanRequest, cap: int = SPAN_CAP, cfg: EvalConfig = DEFAULT_CONFIG) -> int:
    """Smallest integer span t_q (= q) whose upper confidence bound on G is at most g_target."""
    if not r.g_true < r.g_target:
        raise DomainError("g_true must be below g_target for a finite span to exist")
    w = solve_w_for_g(r.g_true, r.z_fixed, cfg=cfg)
    log_target = math.log(r.g_target)

    def ok(t):
        return float(span_upper_bound(t, w, r.z_fixed, r.t_star, r.alpha, cfg.z_thr)) <= log_target

    lo, hi = 1, 2  # lo: known failing (or below the smallest admissible span)
    while not ok(hi):
        lo = hi
        hi *= 2
        if hi > cap:
            if ok(cap):
                hi = cap
                break
            raise UnsatisfiableError(
                f"no span up to {cap} brings the upper bound below {r.g_target}",
                {"g_true": r.g_true, "z": r.z_fixed, "w": w, "cap": cap},
            )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
