"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Lines are printed as each criterion runs and repeated in the pytest terminal
summary under "acceptance criteria".
"""

import io
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import record
from wzrisk.ci_methods import compute_interval
from wzrisk.cli import main
from wzrisk.estimate import DriftEstimate, HorizonSpec, wz_from_params
from wzrisk.mc_harness import PRESETS, coverage_experiment, report
from wzrisk.nct import invert_delta_arr, nct_cdf_arr
from wzrisk.risk_analysis import (
    SpanRequest,
    contour_slope_wz,
    design_constants,
    gradient_wz,
    horizon_trajectory,
    required_span,
    solve_w_for_g,
    var_g_delta,
    var_g_mixture,
)
from wzrisk.stable_eval import RiskCoordinates, g_linear, hybrid_wz

import oracles


def verdict(ok: bool, n: int, text: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"


def decades(value_log10: float, ref: float) -> float:
    return abs(value_log10 - math.log10(ref))


# ---------------------------------------------------------------------------
# 1. yellow/silver row


YS_POINTS = {25.5: 2e-79, 42.5: 2e-40, 100.0: 5e-9}
YS_CIS = {25.5: (2e-109, 3e-52), 42.5: (1e-57, 3e-25), 100.0: (5e-17, 1e-3)}


def _table_row(mu, s2, x_d):
    e = DriftEstimate(mu, s2, 63, 63.0)
    worst = 0.0
    parts = []
    for t_star, ref in YS_POINTS.items():
        r = compute_interval("wz", e, HorizonSpec(t_star, x_d), 0.05)
        lo_ref, hi_ref = YS_CIS[t_star]
        errs = (decades(r.point.log10_g, ref), decades(r.lower.log10_g, lo_ref), decades(r.upper.log10_g, hi_ref))
        worst = max(worst, *errs)
        parts.append(f"t*={t_star:g}: {r.point.log10_g:.2f} ({r.lower.log10_g:.2f}, {r.upper.log10_g:.2f})")
    return worst, "; ".join(parts)


@pytest.mark.xfail(strict=True, reason="rounded published inputs move the far-tail CR/EN cells by >1 decade (ledgered)")
def test_criterion_1_yellow_silver_row():
    t0 = time.perf_counter()
    worst, detail = _table_row(-0.059, 0.014, 12.6)
    elapsed = time.perf_counter() - t0
    worst_unrounded, detail_unrounded = _table_row(-0.058925, 0.116939**2, 12.64433)
    ok = worst <= 1.0 and elapsed < 1.0
    record(verdict(ok, 1, f"yellow/silver row from rounded inputs, worst endpoint error {worst:.2f} decades "
                          f"(limit 1), {elapsed:.2f} s; log10 G (CI): {detail}"))
    record(f"     criterion 1 (reference only): unrounded inputs give worst error {worst_unrounded:.2f} decades; "
           f"{detail_unrounded}")
    assert ok


# ---------------------------------------------------------------------------
# 2. horizon table

HORIZONS = [25.5, 42.5, 100.0, 250.0, 500.0, 1000.0]
# (G or ("1-", Q), width)
TABLE_NEG = [(1.87e-79, 3.16e-52), (1.91e-40, 2.87e-25), (5.32e-9, 1.38e-3), (0.88, 9.97e-1),
             (("1-", 3.74e-11), 2.04e-1), (("1-", 1.08e-36), 5.91e-6)]
TABLE_POS = [(2.13e-53, 8.62e-35), (8.64e-40, 8.15e-25), (4.60e-30, 3.59e-16), (5.90e-29, 4.16e-13),
             (5.90e-29, 6.64e-13), (5.90e-29, 6.21e-13)]


def _compare_rows(rows, table):
    g_err, w_err = 0.0, 0.0
    for row, (g_ref, w_ref) in zip(rows, table):
        if isinstance(g_ref, tuple):
            g_err = max(g_err, decades(row.point.log10_q, g_ref[1]))
        else:
            g_err = max(g_err, decades(row.point.log10_g, g_ref))
        w_err = max(w_err, decades(math.log10(row.width), w_ref))
    return g_err, w_err


def test_criterion_2_horizon_table():
    t0 = time.perf_counter()
    neg = horizon_trajectory(-0.058925, 0.116939**2, 12.64433, 63, 63.0, HORIZONS)
    pos = horizon_trajectory(0.10, 0.20**2, 13.0, 63, 63.0, HORIZONS)
    elapsed = time.perf_counter() - t0
    gn, wn = _compare_rows(neg, TABLE_NEG)
    gp, wp = _compare_rows(pos, TABLE_POS)
    g250 = neg[3].point.g
    widths = [r.width for r in neg]
    non_monotone = widths[3] > widths[2] and widths[5] < widths[3]
    plateau = all(abs(r.point.g / 5.90e-29 - 1) <= 0.01 for r in pos[3:])
    ok = (max(gn, gp) <= 0.6 and max(wn, wp) <= 1.0 and abs(g250 - 0.88) <= 0.02 and non_monotone and plateau
          and elapsed < 5.0)
    record(verdict(ok, 2, f"horizon table, G error {max(gn, gp):.3f} decades (limit 0.6), width error "
                          f"{max(wn, wp):.3f} decades (limit 1), G(250) = {g250:.4f}, non-monotone width "
                          f"{non_monotone}, plateau {plateau}, {elapsed:.2f} s"))
    assert ok


# ---------------------------------------------------------------------------
# 3. numerical accuracy


def _digits(value, ref):
    return -math.log10(max(abs(math.expm1(value - ref)), 1e-16))


def test_criterion_3_accuracy():
    t0 = time.perf_counter()
    g = np.arange(-80, 81) * 0.5
    W, Z = np.meshgrid(g, g)
    keep = W + Z > 0
    W, Z = W[keep], Z[keep]
    lg, lq, _ = hybrid_wz(W, Z)
    dg, dq = [], []
    for w, z, a, b in zip(W, Z, lg, lq):
        # loss-of-information cells (a scale saturated at 0 or -inf) are excluded
        if np.isfinite(a) and a != 0.0:
            dg.append(_digits(a, oracles.log_g_ref(w, z)))
        if np.isfinite(b) and b != 0.0:
            dq.append(_digits(b, oracles.log_q_ref(w, z)))
    mean_g, mean_q = float(np.mean(dg)), float(np.mean(dq))

    band = np.round(np.arange(-250, 251) * 0.2, 10)
    W, Z = np.meshgrid(band, band)
    keep = W + Z > 0
    W, Z = W[keep], Z[keep]
    lg, lq, _ = hybrid_wz(W, Z)
    G, Q = np.exp(lg), np.exp(lq)
    band_err = {}
    for thr in (0.5, 0.2, 0.1):
        centre, half = math.log(thr / (1 - thr)), math.log(1.5)
        lo, hi = 1 / (1 + math.exp(-(centre - half))), 1 / (1 + math.exp(-(centre + half)))
        worst, n = 0.0, 0
        for i in np.nonzero((G > 0.99 * lo) & (G < 1.01 * hi))[0]:
            ref = oracles.g_mp(W[i], Z[i])
            if not lo <= ref < hi:
                continue
            n += 1
            worst = max(worst, abs(G[i] - float(ref)), abs(Q[i] - float(1 - ref)))
        band_err[thr] = (worst, n)
    elapsed = time.perf_counter() - t0
    max_band = max(v[0] for v in band_err.values())
    ok = min(mean_g, mean_q) >= 13 and max_band <= 5e-16 and elapsed < 120
    bands = ", ".join(f"{t:g}: {v[0]:.1e} ({v[1]} pts)" for t, v in band_err.items())
    record(verdict(ok, 3, f"mean digits {mean_g:.2f} (G, {len(dg)} pts) / {mean_q:.2f} (Q, {len(dq)} pts), "
                          f"limit 13; band max abs error {bands}, limit 5e-16; {elapsed:.1f} s"))
    assert ok


# ---------------------------------------------------------------------------
# 4. desk coverage


def test_criterion_4_desk_coverage():
    grid = PRESETS["desk"]
    t0 = time.perf_counter()
    results = coverage_experiment(grid)
    elapsed = time.perf_counter() - t0
    rep = report(results)
    alpha = grid.alpha

    def cells(method):
        return [r for r in results if r.method == method and r.n_valid > 0]

    def se(r):
        return math.sqrt(alpha * (1 - alpha) / r.n_valid)

    wz = rep.summary("wz")
    wz_outliers = [r for r in cells("wz") if r.rate < 0.02 - 3 * se(r) or r.rate > 0.10 + 3 * se(r)]
    boot, tmu = rep.summary("bootstrap"), rep.summary("tmu")

    def mean_se(method):
        rs = cells(method)
        return math.sqrt(sum(alpha * (1 - alpha) / r.n_valid for r in rs)) / len(rs)

    boot_z = (boot.mean - alpha) / mean_se("bootstrap")
    tmu_z = (tmu.mean - alpha) / mean_se("tmu")
    delta = cells("delta_logit")
    under = sum(r.rate < alpha - 3 * se(r) for r in delta)
    over = sum(r.rate > alpha + 3 * se(r) for r in delta)
    ok = (0.04 <= wz.mean <= 0.07 and not wz_outliers and boot_z > 3 and tmu_z > 3 and tmu.mean > boot.mean
          and under > 0 and over > 0 and elapsed < 15 * 60)
    record(verdict(ok, 4, f"desk coverage ({len(grid.cells())} cells x {grid.reps} reps): wz mean {wz.mean:.4f} "
                          f"(range {wz.min:.4f}-{wz.max:.4f}, {len(wz_outliers)} cells beyond [0.02, 0.10] + noise); "
                          f"bootstrap {boot.mean:.4f} ({boot_z:.1f} SE above 0.05); tmu {tmu.mean:.4f} "
                          f"({tmu_z:.1f} SE); delta/logit {under} under- and {over} over-rejecting cells; "
                          f"{elapsed:.0f} s"))
    inside = sum(stats.binom.ppf(0.0005, r.n_valid, alpha) <= r.rejections <= stats.binom.ppf(0.9995, r.n_valid, alpha)
                 for r in cells("wz"))
    record(f"     criterion 4 (reference only): wz cells inside the exact binomial 99.9% band around alpha: "
           f"{inside}/{len(cells('wz'))}")
    assert ok


# ---------------------------------------------------------------------------
# 5. k constant


def test_criterion_5_k_constant():
    k = design_constants(63, 63.0, 25.0).k
    ok = abs(k - 47.82) <= 0.01
    record(verdict(ok, 5, f"k(63, 63, 25) = {k:.5f} (target 47.82 +- 0.01)"))
    assert ok


# ---------------------------------------------------------------------------
# 6. mixture variance

MC_SETTINGS = [(0.0, 20.0, 100.0), (1.0, 20.0, 0.1), (6.0, -5.0, 100.0), (5.5, -5.0, 0.1)]


def test_criterion_6_mixture_variance():
    limit = var_g_mixture(RiskCoordinates(0.0, 1e4), 5000, 5000.0, 5000.0)
    z_scores = []
    for w, z, t_star in MC_SETTINGS:
        v_mc, se = oracles.mc_var_g(w, z, 63, 63.0, t_star)
        z_scores.append(abs(var_g_mixture(RiskCoordinates(w, z), 63, 63.0, t_star) - v_mc) / se)
    over = []
    for ratio in (0.1, 0.5, 1.0, 2.0):
        d = design_constants(63, 63.0, 63.0 * ratio)
        c = RiskCoordinates(0.0, 20.0)
        over.append(var_g_delta(c, d) >= var_g_mixture(c, 63, 63.0, 63.0 * ratio))
    ok = abs(limit - 1 / 12) <= 1e-3 and max(z_scores) <= 3 and all(over)
    record(verdict(ok, 6, f"central limit {limit:.5f} (1/12 = {1 / 12:.5f}); Monte Carlo |z| "
                          f"{', '.join(f'{s:.2f}' for s in z_scores)} (limit 3); delta >= mixture at w=0, z=20: "
                          f"{all(over)}"))
    assert ok


# ---------------------------------------------------------------------------
# 7. property suites


def _monotonicity_and_slope(rng):
    w = rng.uniform(-30, 30, 30_000)
    z = rng.uniform(-30, 30, 30_000)
    keep = w + z > 1e-3
    w, z = w[keep][:10_000], z[keep][:10_000]
    h = 1e-3 * (1 + np.abs(w))
    lg, lq, _ = hybrid_wz(w, z)
    ok = True
    for dw, dz in ((h, 0.0), (0.0, h)):
        lg2, lq2, _ = hybrid_wz(w + dw, z + dz)
        ok &= bool(np.all((lg2 < lg) | (lq2 > lq)))
    gw, gz = gradient_wz(w, z)
    live = gz < 0
    slope = contour_slope_wz(w[live], z[live])
    return ok and bool(np.all(gw[live] < 0)) and bool(np.all(slope < -1)), w.size


def _boundary_and_asymptotics():
    # G -> 1 at the boundary, linearly in the distance eps: 1 - G ~ eps (w Phi(w) + phi(w))
    ok = True
    for w in np.linspace(-5, 5, 11):
        gap = [1 - g_linear(RiskCoordinates(w, -w + eps)) for eps in (1e-2, 1e-4, 1e-6)]
        ok &= gap[0] > gap[1] > gap[2] >= 0 and gap[2] <= 1e-6 * (abs(w) + 1)
    for z in (30.0, 100.0, 300.0):
        for w in np.linspace(-3, 3, 7):
            g = float(oracles.g_mp(w, z))
            approx = stats.norm.sf(w) + stats.norm.pdf(w) / z
            ok &= abs(g - approx) / g <= 3 / z**2
    for z in (-10.0, -15.0):
        for kappa in (0.5, 1.0, 2.0):
            w = kappa - z
            with oracles.mp.workprec(oracles.PREC):
                g = oracles.g_mp(w, z)
                approx = oracles.mp.exp((oracles.mp.mpf(z) + w) * (oracles.mp.mpf(z) - w) / 2)
                ok &= float(abs((g - approx) / g)) <= math.exp(-z * z / 2)
    return bool(ok)


def _complementarity():
    w, z = np.meshgrid(np.linspace(-10, 10, 81), np.linspace(-10, 10, 81))
    keep = w + z > 0
    lg, lq, _ = hybrid_wz(w[keep], z[keep])
    both = (lg > -36) & (lq > -36)
    return float(np.max(np.abs(np.exp(lg[both]) + np.exp(lq[both]) - 1)))


def _nct_roundtrip(rng):
    n = 1000
    nu = rng.integers(4, 201, n).astype(float)
    delta = rng.uniform(-40, 40, n)
    x = (rng.standard_normal(n) + delta) / np.sqrt(rng.chisquare(nu) / nu)
    p = nct_cdf_arr(x, nu, delta)
    keep = (p > 1e-6) & (p < 1 - 1e-6)
    return float(np.max(np.abs(invert_delta_arr(x[keep], nu[keep], p[keep]) - delta[keep])))


def _sampling_laws(rng):
    q, mu, s2, x_d, t_star, reps = 30, -0.05, 0.1, 3.0, 20.0, 10_000
    inc = rng.normal(mu, math.sqrt(s2), size=(reps, q))
    mu_hat = inc.mean(axis=1)
    s2_hat = np.mean((inc - mu_hat[:, None]) ** 2, axis=1)
    p_mu = stats.kstest(mu_hat, stats.norm(mu, math.sqrt(s2 / q)).cdf).pvalue
    p_s2 = stats.kstest(q * s2_hat / s2, stats.chi2(q - 1).cdf).pvalue
    w_true = (mu * t_star + x_d) / math.sqrt(s2 * t_star)
    w_hat, _ = wz_from_params(mu_hat, s2_hat, x_d, t_star)
    stat = w_hat * math.sqrt((q - 1) / q) * math.sqrt(q / t_star)
    p_w = stats.kstest(stat, lambda v: nct_cdf_arr(v, q - 1, w_true * math.sqrt(q / t_star))).pvalue
    return min(p_mu, p_s2, p_w)


def _span_agreement():
    agree = []
    for g_true, z, t_star in ((1e-10, 20.0, 100.0), (1e-6, 20.0, 100.0), (1e-3, 20.0, 50.0)):
        w = solve_w_for_g(g_true, z)
        agree.append(required_span(SpanRequest(g_true, z, t_star)) == oracles.brute_force_span(w, z, t_star, 0.05, 0.1))
    return all(agree)


def _run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out=out, err=err)
    return code, out.getvalue()


def _seeded_reruns(tmp_path):
    seeded = [
        ["assess", "--preset", "glass", "--method", "all", "--B", "300", "--seed", "11"],
        ["coverage", "--preset", "desk", "--seed", "3", "--max-cells", "2", "--reps", "200", "--B", "100"],
    ]
    same = True
    for i, argv in enumerate(seeded):
        a, b = tmp_path / f"a{i}.csv", tmp_path / f"b{i}.csv"
        ca, oa = _run_cli(argv + ["--out", str(a)])
        cb, ob = _run_cli(argv + ["--out", str(b)])
        same &= ca == cb == 0 and oa == ob and a.read_bytes() == b.read_bytes()
    return bool(same)


def test_criterion_7_properties(tmp_path):
    rng = np.random.default_rng(20240917)
    mono, n_mono = _monotonicity_and_slope(rng)
    boundary = _boundary_and_asymptotics()
    comp = _complementarity()
    roundtrip = _nct_roundtrip(rng)
    p_min = _sampling_laws(rng)
    spans = _span_agreement()
    reruns = _seeded_reruns(tmp_path)
    ok = mono and boundary and comp <= 1e-12 and roundtrip <= 1e-8 and p_min > 0.01 and spans and reruns
    record(verdict(ok, 7, f"monotone + slope < -1 on {n_mono} pts: {mono}; boundary/asymptotics: {boundary}; "
                          f"G+Q-1 max {comp:.1e}; nct roundtrip max {roundtrip:.1e}; KS min p {p_min:.3f}; "
                          f"span = brute force on 3 instances: {spans}; seeded reruns bit-identical: {reruns}"))
    assert ok


@pytest.mark.xfail(strict=True, reason="faithful bound gives 38, not <= 20, at g_true = 1e-6 (ledgered)")
def test_required_span_published_example():
    t = required_span(SpanRequest(1e-6, 20.0, 100.0, 0.05, 0.1))
    ok = t <= 20
    record(f"{'PASS' if ok else 'FAIL'} required-span example: g_true = 1e-6, z = 20, t* = 100 gives {t} "
           f"(expected <= 20)")
    assert ok
