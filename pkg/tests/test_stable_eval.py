import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import log_ndtr, ndtr

from wzrisk import DomainError
from wzrisk.stable_eval import (
    DEFAULT_CONFIG,
    G_DIRECT,
    Q_DIRECT,
    DualScaleProb,
    EvalConfig,
    RiskCoordinates,
    eval_hybrid,
    format_prob,
    g_linear,
    hybrid_wz,
    log1mexp,
    log_g,
    log_g_wz,
    log_q,
    log_q_wz,
    mills_s7,
)

import oracles


def rc(w, z):
    return RiskCoordinates(w, z)


# -- types -------------------------------------------------------------------


def test_coordinates_reject_inadmissible():
    with pytest.raises(DomainError):
        RiskCoordinates(1.0, -1.0)
    with pytest.raises(DomainError):
        RiskCoordinates(-2.0, 1.0)
    with pytest.raises(DomainError):
        RiskCoordinates(math.inf, 1.0)
    with pytest.raises(DomainError):
        RiskCoordinates(math.nan, 1.0)


def test_eval_config_requires_positive_threshold():
    with pytest.raises(DomainError):
        EvalConfig(0.0)
    assert DEFAULT_CONFIG.z_thr == 19.0


def test_dual_scale_complement_invariant():
    p = DualScaleProb.from_log_g(math.log(0.3))
    assert p.g + p.q == pytest.approx(1.0, abs=1e-15)
    p = DualScaleProb.from_log_q(math.log(1e-20))
    assert p.q == pytest.approx(1e-20, rel=1e-14)
    assert p.log_g == pytest.approx(-1e-20, rel=1e-12)


# -- Mills series --------------------------------------------------------------


def test_mills_leading_term():
    assert mills_s7(1e6) == pytest.approx(1e-6, rel=1e-12)


@pytest.mark.parametrize("z", [19.0, 20.0, 25.0, 40.0, 100.0])
def test_mills_matches_oracle(z):
    ref = oracles.mills_ref(z)
    assert abs(mills_s7(z) / ref - 1) < 1e-13


def test_mills_rejects_nonpositive():
    with pytest.raises(DomainError):
        mills_s7(0.0)
    with pytest.raises(DomainError):
        mills_s7(-3.0)


# -- logPhi dependency ---------------------------------------------------------


@pytest.mark.parametrize("x", [-40.0, -38.5, -20.0, -8.0, -1.0, 0.0, 3.0])
def test_log_ndtr_dependency_against_oracle(x):
    ref = oracles.log_ndtr_ref(x)
    assert abs(float(log_ndtr(x)) - ref) <= 1e-12 * abs(ref) + 1e-300
    if x == -40.0:
        assert ref == pytest.approx(-804.6084420137538, rel=1e-14)


# -- g_linear --------------------------------------------------------------------


def test_g_linear_boundary_limit():
    # exact value is 1 - eps*phi(0) + O(eps^2); see the decisions ledger
    g = g_linear(rc(0.0, 1e-6))
    assert g == pytest.approx(float(oracles.g_mp(0.0, 1e-6)), abs=1e-15)
    assert abs(g - 1.0) < 1e-6


def test_g_linear_table_value():
    g = g_linear(rc(18.868, 23.957))
    assert abs(math.log10(g) - math.log10(1.87e-79)) <= 0.5


def test_g_linear_mills_regime():
    expected = 0.5 + 1 / math.sqrt(2 * math.pi) / 20
    assert g_linear(rc(0.0, 20.0)) == pytest.approx(expected, rel=1e-4)
    assert g_linear(rc(0.0, 20.0)) == pytest.approx(float(oracles.g_mp(0, 20)), rel=1e-14)


def test_g_linear_underflows_in_deep_tail():
    assert g_linear(rc(45.0, 50.0)) == 0.0
    assert math.isfinite(log_g(rc(45.0, 50.0)))


# -- log_g / log_q -----------------------------------------------------------------


def test_log_g_boundary():
    assert abs(log_g(rc(0.0, 1e-6))) < 1e-6
    assert log_g(rc(0.0, 1e-6)) == pytest.approx(oracles.log_g_ref(0.0, 1e-6), rel=1e-12)


def test_log_g_table_value():
    assert log_g(rc(18.868, 23.957)) == pytest.approx(math.log(1.87e-79), abs=1.2)


def test_log_g_deep_right_tail():
    ref = oracles.log_g_ref(40.0, 50.0)
    val = log_g(rc(40.0, 50.0))
    assert abs(math.expm1(val - ref)) < 1e-12


def test_log_q_near_boundary_complement():
    assert math.exp(log_q(rc(0.0, 0.01))) == pytest.approx(1 - g_linear(rc(0.0, 0.01)), abs=1e-10)
    assert log_q(rc(0.0, 1e-6)) < log_q(rc(0.0, 1e-3)) < log_q(rc(0.0, 1e-1))


def test_log_q_left_region():
    # the second term is not negligible here (ledgered), so compare with the oracle
    ref = oracles.log_q_ref(-8.0, 30.0)
    assert log_q(rc(-8.0, 30.0)) == pytest.approx(ref, rel=1e-9)
    assert ref == pytest.approx(-35.3287, abs=1e-4)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_log_q_nan_maps_to_minus_inf():
    # Q underflows on the log scale only far beyond double range; a NaN path must
    # surface as -inf, never NaN
    v = log_q_wz(np.array([5.0, 1e200]), np.array([5.0, 1e200]))
    assert not np.isnan(v).any()


def test_log1mexp_accuracy():
    for x in [-1e-20, -1e-5, -0.5, -0.7, -2.0, -50.0, -800.0]:
        ref = float(oracles.mp.log(-oracles.mp.expm1(oracles.mp.mpf(x))))
        assert log1mexp(x) == pytest.approx(ref, rel=1e-14)


def test_complement_grid():
    w, z = np.meshgrid(np.linspace(-10, 10, 81), np.linspace(-10, 10, 81))
    ok = w + z > 0
    lg, lq, _ = hybrid_wz(w[ok], z[ok])
    both = (lg > -36) & (lq > -36)
    assert np.all(np.abs(np.exp(lg[both]) + np.exp(lq[both]) - 1) <= 1e-12)
    lg2 = log_g_wz(w[ok], z[ok])
    lq2 = log_q_wz(w[ok], z[ok])
    both = (lg2 > -36) & (lq2 > -36)
    assert np.all(np.abs(np.exp(lg2[both]) + np.exp(lq2[both]) - 1) <= 1e-12)


# -- hybrid --------------------------------------------------------------------------


def test_hybrid_branches():
    p = eval_hybrid(rc(-30.0, 40.0))
    assert p.branch == Q_DIRECT
    ref = oracles.log_q_ref(-30.0, 40.0)
    assert abs(math.expm1(p.log_q - ref)) < 1e-12
    assert eval_hybrid(rc(30.0, 40.0)).branch == G_DIRECT


def test_hybrid_loi_flag():
    p = eval_hybrid(rc(-30.0, 40.0))
    assert p.log_g == 0.0 or p.log_g > -1e-190
    assert not p.loi or p.log_g == 0.0


def test_hybrid_iucn_band_small_sample():
    rng = np.random.default_rng(5)
    n = 0
    while n < 60:
        w, z = rng.uniform(-3, 3), rng.uniform(-3, 40)
        if w + z <= 0:
            continue
        ref = oracles.g_mp(w, z)
        if not 0.4 <= ref <= 0.6:
            continue
        n += 1
        assert abs(eval_hybrid(rc(w, z)).g - float(ref)) <= 5e-16


# -- properties ------------------------------------------------------------------------

admissible = st.tuples(st.floats(-30, 30), st.floats(-30, 30)).filter(lambda t: t[0] + t[1] > 1e-3)


@settings(max_examples=300, deadline=None)
@given(admissible)
def test_monotone_both_arguments(wz):
    w, z = wz
    h = 1e-3 * (1 + abs(w))
    base = eval_hybrid(rc(w, z))
    for dw, dz in ((h, 0.0), (0.0, h)):
        nxt = eval_hybrid(rc(w + dw, z + dz))
        # G decreasing <=> log-odds decreasing; compare on whichever side resolves it
        assert (nxt.log_g < base.log_g) or (nxt.log_q > base.log_q)


@settings(max_examples=200, deadline=None)
@given(admissible)
def test_hybrid_agrees_with_oracle(wz):
    w, z = wz
    p = eval_hybrid(rc(w, z))
    lg_ref = oracles.log_g_ref(w, z)
    lq_ref = oracles.log_q_ref(w, z)
    if p.log_g != 0.0:
        assert abs(math.expm1(p.log_g - lg_ref)) < 1e-11
    if p.log_q != 0.0:
        assert abs(math.expm1(p.log_q - lq_ref)) < 1e-11


@pytest.mark.parametrize("w", np.linspace(-5, 5, 11))
def test_boundary_continuity(w):
    vals = [g_linear(rc(w, -w + eps)) for eps in (1.0, 0.1, 0.01, 0.001)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert 1 - vals[-1] < 1e-2


@pytest.mark.parametrize("z", [30.0, 100.0, 300.0])
def test_right_tail_asymptotic(z):
    for w in np.linspace(-3, 3, 13):
        g = float(oracles.g_mp(w, z))
        approx = float(ndtr(-w)) + math.exp(-w * w / 2) / math.sqrt(2 * math.pi) / z
        assert abs(g - approx) / g <= 3 / z**2
        assert abs(eval_hybrid(rc(w, z)).g / g - 1) < 1e-13


@pytest.mark.parametrize("z", [-10.0, -15.0, -25.0])
def test_left_tail_asymptotic(z):
    for kappa in (0.1, 0.5, 1.0, 2.0):
        w = kappa - z
        with oracles.mp.workprec(oracles.PREC):
            g = oracles.g_mp(w, z)
            wm, zm = oracles.mp.mpf(w), oracles.mp.mpf(z)
            approx = oracles.mp.exp((zm + wm) * (zm - wm) / 2)
            rel = float(abs((g - approx) / g))
        assert rel <= math.exp(-z * z / 2)
        assert abs(math.expm1(log_g(rc(w, z)) - oracles.log_g_ref(w, z))) < 1e-12


# -- formatting ------------------------------------------------------------------------


def test_format_prob():
    assert format_prob(DualScaleProb.from_log_g(math.log(1.87e-79))) == "1.87e-79"
    assert format_prob(DualScaleProb.from_log_q(math.log(3.74e-11))) == "1-3.74e-11"
    assert format_prob(DualScaleProb.from_log_g(math.log(0.885))) == "0.885"
    assert format_prob(DualScaleProb.from_log_g(-2000.0)) == "2.58e-869"
