"""Noncentral-t distribution function and its inversion in the noncentrality.

If Z ~ N(0, 1) and V ~ chi^2_nu are independent, T = (Z + delta) / sqrt(V / nu)
has the noncentral t distribution with ``nu`` degrees of freedom.  The
confidence bounds for w and z are obtained by solving
``F(t_obs; nu, delta) = target`` for ``delta``; ``F`` is strictly decreasing
in ``delta``, so the solution is unique.

The distribution function uses ``scipy.special.nctdtr`` (a convergent series
method) where it is reliable and falls back to direct quadrature of the
mixture representation

    F(x; nu, delta) = E[ Phi(x sqrt(V / nu) - delta) ]

when the noncentrality is large or the series returns a non-finite value.
In the far tails (F below ``TAIL_LEVEL`` or above ``1 - TAIL_LEVEL``) the
series keeps its absolute accuracy but not its relative accuracy, so there the
mixture is integrated on the log scale around the integrand's mode instead
(the upper tail through the reflection ``1 - F(-x; nu, -delta)``); this keeps
the function monotone in ``x`` across its whole range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import ConvergenceError, DomainError

#: beyond this |delta| the series is replaced by the mixture quadrature
SERIES_DELTA_MAX = 200.0
#: bracket expansion gives up beyond this |delta|
DELTA_CAP = 1e6
DELTA_TOL = 1e-10
#: below this value the distribution function is recomputed with relative accuracy
TAIL_LEVEL = 1e-9


@dataclass(frozen=True)
class NctParams:
    """Degrees of freedom and noncentrality of a noncentral t law."""

    df: int
    delta: float

    def __post_init__(self):
        if not (self.df >= 1):
            raise DomainError(f"df must be >= 1, got {self.df!r}")
        if not math.isfinite(self.delta):
            raise DomainError(f"delta must be finite, got {self.delta!r}")


def _cdf_quad(x: float, nu: float, delta: float) -> float:
    """P(T <= x) by adaptive quadrature over the chi-square mixing variable."""
    if x == 0.0:
        return float(special.ndtr(-delta))
    chi = stats.chi2(nu)
    lo, hi = chi.ppf(1e-18), chi.isf(1e-18)
    pts = [nu, max(lo, nu - 5 * math.sqrt(2 * nu)), min(hi, nu + 5 * math.sqrt(2 * nu))]
    crit = nu * (delta / x) ** 2
    if delta / x > 0 and lo < crit < hi:
        # the normal factor switches from ~0 to ~1 around here
        pts.append(crit)
    pts = sorted(p for p in set(pts) if lo < p < hi)

    def f(v):
        return special.ndtr(x * math.sqrt(v / nu) - delta) * chi.pdf(v)

    val, err = integrate.quad(f, lo, hi, points=pts or None, epsabs=1e-15, epsrel=1e-13, limit=400)
    if not (err <= 1e-11):
        raise ConvergenceError(
            "noncentral t quadrature did not converge",
            {"x": x, "df": nu, "delta": delta, "abserr": err},
        )
    return min(max(val, 0.0), 1.0)


def _cdf_lower_tail(x: float, nu: float, delta: float) -> float:
    """Small values of P(T <= x) with relative accuracy.

    Integrates exp(g(u)) over u = log V, where
    g(u) = log Phi(x sqrt(e^u / nu) - delta) + log f_chi2(e^u) + u, scaled by
    its maximum so that results far below the double range of the
    integrand's factors are still resolved.
    """
    half = 0.5 * nu
    log_norm = -half * math.log(2.0) - special.gammaln(half)

    def g(u):
        return float(special.log_ndtr(x * math.exp(0.5 * u) / math.sqrt(nu) - delta)) + log_norm + half * u - 0.5 * math.exp(u)

    centre = math.log(nu)
    opt = optimize.minimize_scalar(lambda u: -g(u), bounds=(centre - 200.0, centre + 10.0), method="bounded",
                                   options={"xatol": 1e-10})
    u0 = float(opt.x)
    g0 = g(u0)
    if not math.isfinite(g0):
        return 0.0

    def f(u):
        return math.exp(g(u) - g0)

    left = u0 - 80.0 / min(1.0, half)
    pieces = [(left, u0 - 5.0), (u0 - 5.0, u0), (u0, u0 + 5.0), (u0 + 5.0, u0 + 40.0)]
    total = 0.0
    for a, b in pieces:
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        total += val
    log_val = g0 + math.log(total) if total > 0 else -math.inf
    return math.exp(log_val) if log_val > -745.2 else 0.0


def nct_cdf_arr(x, df, delta, *, tails: bool = True):
    """Vectorised P(T <= x) for T ~ t(df, delta); broadcasts its arguments.

    With ``tails=False`` the lower-tail refinement is skipped; values below
    ``TAIL_LEVEL`` are then accurate in absolute terms only (enough for root
    finding against moderate targets).
    """
    x, df, delta = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(df, dtype=float), np.asarray(delta, dtype=float)
    )
    if np.any(~(np.isfinite(x) & np.isfinite(delta))):
        raise DomainError("nct_cdf requires finite x and delta")
    if np.any(~(df >= 1)):
        raise DomainError("nct_cdf requires df >= 1")
    out = np.where(delta == 0.0, special.stdtr(df, x), special.nctdtr(df, delta, x))
    out = np.where(x == 0.0, special.ndtr(-delta), out)
    bad = (np.abs(delta) > SERIES_DELTA_MAX) | ~np.isfinite(out)
    if np.any(bad):
        out = np.array(out, copy=True, ndmin=1)
        flat = out.reshape(-1)
        xf, nf, df_ = x.reshape(-1), df.reshape(-1), delta.reshape(-1)
        for i in np.flatnonzero(bad):
            flat[i] = _cdf_quad(float(xf[i]), float(nf[i]), float(df_[i]))
        out = flat.reshape(x.shape)
    if tails:
        small = (out < TAIL_LEVEL) & (x != 0.0)
        large = (out > 1.0 - TAIL_LEVEL) & (x != 0.0)
        if np.any(small | large):
            out = np.array(out, copy=True, ndmin=1)
            flat = out.reshape(-1)
            xf, nf, df_ = (np.broadcast_to(a, out.shape).reshape(-1) for a in (x, df, delta))
            for i in np.flatnonzero(small.reshape(-1)):
                flat[i] = _cdf_lower_tail(float(xf[i]), float(nf[i]), float(df_[i]))
            # upper tail through the reflection F(x; nu, delta) = 1 - F(-x; nu, -delta)
            for i in np.flatnonzero(large.reshape(-1)):
                flat[i] = 1.0 - _cdf_lower_tail(-float(xf[i]), float(nf[i]), -float(df_[i]))
            out = flat.reshape(out.shape if x.ndim else ())
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def nct_cdf(x: float, p: NctParams) -> float:
    """P(T <= x) for T ~ t(p.df, p.delta)."""
    return float(nct_cdf_arr(x, p.df, p.delta))


def invert_delta_arr(x_obs, df, target, tol: float = DELTA_TOL, max_iter: int = 400):
    """Vectorised solution of ``F(x_obs; df, delta) = target`` for ``delta``.

    The bracket is grown geometrically around ``delta0 = x_obs`` and then
    shrunk by Illinois-modified secant steps, with a bisection forced whenever
    a step fails to halve the bracket.  Terminates when the bracket width is
    at most ``tol`` (or a few ulp of delta, whichever is larger).
    """
    x_obs, df, target = np.broadcast_arrays(
        np.asarray(x_obs, dtype=float), np.asarray(df, dtype=float), np.asarray(target, dtype=float)
    )
    if np.any(~((target > 0) & (target < 1))):
        raise DomainError("target probability must lie strictly in (0, 1)")
    shape = x_obs.shape
    x = x_obs.ravel().copy()
    nu = df.ravel().copy()
    tg = target.ravel().copy()

    def f(d, sel=slice(None)):
        return nct_cdf_arr(x[sel], nu[sel], d, tails=False) - tg[sel]

    # bracket: F is decreasing in delta, so f(lo) > 0 > f(hi)
    lo = x.copy()
    hi = x.copy()
    flo = f(lo)
    fhi = flo.copy()
    step = np.ones_like(x)
    while True:
        need_lo = flo < 0
        need_hi = fhi > 0
        if not (need_lo.any() or need_hi.any()):
            break
        if np.any(np.abs(lo[need_lo]) - step[need_lo] > DELTA_CAP) or np.any(
            np.abs(hi[need_hi]) + step[need_hi] > DELTA_CAP
        ):
            i = int(np.flatnonzero(need_lo | need_hi)[0])
            raise ConvergenceError(
                "bracket expansion for delta exceeded the cap",
                {"x_obs": x[i], "df": nu[i], "target": tg[i], "lo": lo[i], "hi": hi[i], "cap": DELTA_CAP},
            )
        if need_lo.any():
            idx = np.flatnonzero(need_lo)
            hi[idx], fhi[idx] = lo[idx], flo[idx]
            lo[idx] = lo[idx] - step[idx]
            flo[idx] = f(lo[idx], idx)
        if need_hi.any():
            idx = np.flatnonzero(need_hi)
            lo[idx], flo[idx] = hi[idx], fhi[idx]
            hi[idx] = hi[idx] + step[idx]
            fhi[idx] = f(hi[idx], idx)
        step *= 2.0

    root = np.where(flo == 0, lo, np.where(fhi == 0, hi, np.nan))
    active = np.isnan(root)
    side = np.zeros_like(x)  # +1 if lo was kept last time, -1 if hi was kept
    prev_width = hi - lo
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        l, h, fl, fh = lo[idx], hi[idx], flo[idx], fhi[idx]
        eps = np.maximum(tol, 4 * np.spacing(np.maximum(np.abs(l), np.abs(h))))
        done = (h - l) <= eps
        if done.any():
            d = idx[done]
            root[d] = 0.5 * (lo[d] + hi[d])
            active[d] = False
            keep = ~done
            idx, l, h, fl, fh = idx[keep], l[keep], h[keep], fl[keep], fh[keep]
            if idx.size == 0:
                break
        width = h - l
        sec = l - fl * width / (fh - fl)
        mid = 0.5 * (l + h)
        slow = width > 0.5 * prev_width[idx]
        c = np.where(slow | ~np.isfinite(sec) | (sec <= l) | (sec >= h), mid, sec)
        prev_width[idx] = width
        fc = f(c, idx)
        hit = fc == 0
        if hit.any():
            root[idx[hit]] = c[hit]
            active[idx[hit]] = False
        go_lo = fc > 0  # root is to the right of c
        s = side[idx]
        # Illinois modification: halve the stale endpoint's residual
        new_fl = np.where(go_lo, fc, np.where(s == 1, 0.5 * fl, fl))
        new_fh = np.where(go_lo, np.where(s == -1, 0.5 * fh, fh), fc)
        lo[idx] = np.where(go_lo, c, l)
        hi[idx] = np.where(go_lo, h, c)
        flo[idx] = new_fl
        fhi[idx] = new_fh
        side[idx] = np.where(go_lo, -1, 1)
    else:
        if active.any():
            i = int(np.flatnonzero(active)[0])
            raise ConvergenceError(
                "delta inversion did not converge",
                {"x_obs": x[i], "df": nu[i], "target": tg[i], "lo": lo[i], "hi": hi[i]},
            )
    root = root.reshape(shape)
    return root[()] if root.ndim == 0 else root


def invert_delta(x_obs: float, df: int, target: float) -> float:
    """The unique ``delta`` with ``nct_cdf(x_obs; df, delta) == target``."""
    if not (0.0 < target < 1.0):
        raise DomainError(f"target must lie in (0, 1), got {target!r}")
    if not math.isfinite(x_obs):
        raise DomainError(f"x_obs must be finite, got {x_obs!r}")
    if not df >= 1:
        raise DomainError(f"df must be >= 1, got {df!r}")
    return float(invert_delta_arr(x_obs, df, target))
