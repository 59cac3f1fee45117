import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from uwbsim.analytic import (
    AnalyticConfig,
    SinrBreakdown,
    analytic_breakdown,
    ber_from_sinr,
    desired_energy_and_noise,
    empirical_omega_sigma,
    estimate_variance_decomposition,
    omega0,
    omega_sigma,
    ray_arrival_density,
    sigma_iasi,
    sigma_isi,
    sigma_mui,
    sinr_and_ber,
)
from uwbsim.channel import ChannelRealization, preset
from uwbsim.montecarlo import CONVENTIONAL_RX, PARTIAL_RX, Receiver, SimConfig, run_trial
from uwbsim.quadrature import ConvergenceError, adaptive_simpson
from uwbsim.txrx import FrameConfig

OFFICE = preset("indoor_office_los")
RESIDENTIAL = preset("residential_los")
F15 = FrameConfig.from_rate(15e6)
F30 = FrameConfig.from_rate(30e6)


def cfg(channel=OFFICE, frame=F15, **kw):
    return AnalyticConfig(channel, frame, **kw)


def q_oracle(sinr):
    with mpmath.workdps(40):
        return float(mpmath.erfc(mpmath.sqrt(mpmath.mpf(sinr) / 2)) / 2)


# --- quadrature -----------------------------------------------------------------------


@pytest.mark.parametrize("f,a,b", [(np.sin, 0.0, np.pi), (np.exp, -1.0, 2.0),
                                   (lambda x: np.exp(-x**2), -3.0, 3.0), (np.sqrt, 0.0, 1.0)])
def test_adaptive_simpson_matches_scipy(f, a, b):
    want = integrate.quad(f, a, b, epsabs=0, epsrel=1e-12)[0]
    assert adaptive_simpson(f, a, b, rtol=1e-8) == pytest.approx(want, rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(-2, 0), st.floats(0.1, 3))
def test_adaptive_simpson_is_exact_for_cubics(coef, a, width):
    p = np.polynomial.Polynomial(coef)
    b = a + width
    want = p.integ()(b) - p.integ()(a)
    assert adaptive_simpson(p, a, b, rtol=1e-10, atol=1e-12) == pytest.approx(want, rel=1e-9, abs=1e-10)


def test_adaptive_simpson_breakpoints_and_reversal():
    kink = lambda x: np.abs(x - 0.3)
    want = (0.3**2 + 0.7**2) / 2
    assert adaptive_simpson(kink, 0, 1, rtol=1e-12, breakpoints=[0.3]) == pytest.approx(want, rel=1e-12)
    assert adaptive_simpson(np.exp, 1, 0) == pytest.approx(-(math.e - 1), rel=1e-4)
    assert adaptive_simpson(np.exp, 1, 1) == 0.0


def test_adaptive_simpson_raises_on_budget_exhaustion():
    with pytest.raises(ConvergenceError):
        adaptive_simpson(lambda x: np.sin(1 / np.maximum(x, 1e-12)), 0, 1, rtol=1e-10, max_intervals=64)


# --- closed forms ---------------------------------------------------------------------


def test_omega0_values():
    assert abs(omega0(RESIDENTIAL) - 0.03314) <= 1e-5
    assert abs(omega0(OFFICE) - 0.1259) <= 1e-4
    doubled = OFFICE.with_overrides(intra_decay_gamma0=2 * OFFICE.intra_decay_gamma0)
    assert omega0(doubled) == pytest.approx(omega0(OFFICE) / 2, rel=1e-14)


def test_desired_energy_and_noise():
    Eb, sn = desired_energy_and_noise(RESIDENTIAL, F15, 1.0)
    assert abs(Eb - 0.03314) <= 1e-5 and sn == 0.5
    F2 = FrameConfig.from_rate(15e6, Ns=2)
    Eb2, sn2 = desired_energy_and_noise(RESIDENTIAL, F2, 1.0)
    assert Eb2 == pytest.approx(4 * Eb, rel=1e-14) and sn2 == pytest.approx(2 * sn, rel=1e-14)
    Ebp, snp = desired_energy_and_noise(RESIDENTIAL, F15, 1.0, receiver=PARTIAL_RX)
    assert Ebp == pytest.approx(0.25 * Eb, rel=1e-9) and snp == pytest.approx(0.5 * sn, rel=1e-9)


def test_sinr_and_ber_oracles():
    sinr, ber = sinr_and_ber(SinrBreakdown(9.0, 1.0, 0.0, 0.0, 0.0))
    assert sinr == 9.0
    assert abs(ber - 1.3499e-3) <= 1e-7
    assert ber == pytest.approx(q_oracle(9.0), rel=1e-12)
    assert sinr_and_ber(SinrBreakdown(0.0, 0.2, 0.1, 0.0, 0.3)) == (0.0, 0.5)
    with pytest.raises(ZeroDivisionError):
        sinr_and_ber(SinrBreakdown(1.0, 0.0, 0.0, 0.0, 0.0))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 60), st.floats(1e-3, 10))
def test_ber_is_bounded_and_decreasing_in_sinr(s, ds):
    a, b = ber_from_sinr(s), ber_from_sinr(s + ds)
    assert 0 < a <= 0.5 and b < a
    assert float(a) == pytest.approx(q_oracle(s), rel=1e-10)


def test_noise_only_ber_matches_single_tap_simulation():
    # one tap of power Ω0, no interference: SINR = 2 Ns Ω0 / N0
    om, N0 = omega0(OFFICE), 0.05
    _, ber = sinr_and_ber(SinrBreakdown(*desired_energy_and_noise(OFFICE, F15, N0), 0.0, 0.0, 0.0))
    sim = SimConfig(channel=None, frame=F15, ebn0_grid_db=(0,), block_bits=1000, master_seed=3)
    ebn0_db = 10 * math.log10(F15.Ns / N0)
    tap = [ChannelRealization.delta(amplitude=math.sqrt(om))]
    errors = bits = 0
    for t in range(200):
        e, n = run_trial(sim, ebn0_db, 0, t, channels=tap)
        errors += int(e[0])
        bits += n
    assert abs(errors / bits - ber) <= 3 * math.sqrt(ber * (1 - ber) / bits)


# --- ray-arrival series ---------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(1e-3, 100.0))
def test_ray_arrival_density_sums_to_rate(lam, y):
    if lam * y > 2000:
        return
    assert float(ray_arrival_density(lam, y, rtol=1e-12)) == pytest.approx(lam, rel=1e-9)


def test_ray_arrival_density_vanishes_before_origin_and_flags_divergence():
    assert np.all(ray_arrival_density(1.0, [-1.0, 0.0]) == 0.0)
    with pytest.raises(ConvergenceError):
        ray_arrival_density(10.0, 1e4)


# --- interference terms ---------------------------------------------------------------


def test_iasi_vanishes_for_zero_late_profile():
    c = cfg()
    prof = c.profile
    prof.values = np.where(prof.nodes >= 0, 0.0, prof.values)
    assert sigma_iasi(c) == 0.0


def test_terms_are_linear_in_their_leading_power():
    c = cfg(frame=F30, n_interferers_Nu=2)
    assert sigma_iasi(c, 3 * omega0(OFFICE)) == pytest.approx(3 * sigma_iasi(c), rel=1e-12)
    assert sigma_isi(c, 0.02) == pytest.approx(2 * sigma_isi(c, 0.01), rel=1e-12)
    assert sigma_isi(c, 0.0) == 0.0


def test_omega_sigma_is_zero_when_the_tail_fits_one_frame():
    c = cfg(frame=F15)
    assert c.n_previous_frames == 1
    assert omega_sigma(c) == 0.0 and sigma_isi(c) == 0.0


def test_isi_increases_with_bit_rate():
    vals = [sigma_isi(cfg(RESIDENTIAL, FrameConfig.from_rate(r * 1e6))) for r in (1, 5, 15, 30)]
    assert all(v >= 0 for v in vals)
    assert vals == sorted(vals) and vals[-1] > vals[0]


@pytest.mark.parametrize("channel,frame", [(OFFICE, F30), (RESIDENTIAL, F15), (RESIDENTIAL, F30)])
def test_omega_sigma_matches_channel_simulation(channel, frame):
    c = cfg(channel, frame)
    ana = omega_sigma(c)
    emp = empirical_omega_sigma(c, np.random.default_rng(17), 4000)
    assert ana > 0 and 0.5 <= ana / emp <= 2.0


def test_mui_scaling():
    assert sigma_mui(cfg(n_interferers_Nu=0)) == 0.0
    one = sigma_mui(cfg(n_interferers_Nu=1))
    assert one > 0
    assert sigma_mui(cfg(n_interferers_Nu=2)) == pytest.approx(2 * one, rel=1e-12)
    assert sigma_mui(cfg(n_interferers_Nu=1, f_omega0=0.5)) == pytest.approx(one / 2, rel=1e-12)


def test_keep_fraction_one_partial_equals_conventional():
    a = analytic_breakdown(cfg(RESIDENTIAL, F30, n_interferers_Nu=2))
    b = analytic_breakdown(cfg(RESIDENTIAL, F30, n_interferers_Nu=2, receiver=Receiver("partial", 1.0)))
    for k, v in a.as_dict().items():
        assert getattr(b, k) == pytest.approx(v, rel=1e-12, abs=0)


def test_halving_tolerance_moves_terms_less_than_tolerance():
    coarse = cfg(RESIDENTIAL, F30, n_interferers_Nu=1, tolerance=1e-3)
    fine = coarse.with_(tolerance=5e-4)
    a, b = analytic_breakdown(coarse), analytic_breakdown(fine)
    for k, v in b.as_dict().items():
        assert abs(getattr(a, k) - v) <= 1e-3 * abs(v)


def test_tolerance_bounds():
    with pytest.raises(ValueError):
        cfg(tolerance=0.0)
    with pytest.raises(ValueError):
        cfg(tolerance=0.05)
    with pytest.raises(ValueError):
        cfg(n_interferers_Nu=-1)


# --- empirical decomposition oracle ---------------------------------------------------


def test_decomposition_noise_only_matches_closed_form():
    c = cfg(N0=0.2)
    b = estimate_variance_decomposition(c, 1, 2000, components={"noise"}, bits_per_trial=20)
    assert b.Eb == 0.0 and b.sigma_iasi2 == 0.0
    assert abs(b.sigma_n2 - 0.1) <= 0.02 * 0.1


def test_decomposition_desired_only_with_fixed_tap():
    c = cfg()
    tap = [ChannelRealization.delta(amplitude=math.sqrt(omega0(OFFICE)))]
    b = estimate_variance_decomposition(c, 2, 1000, components={"desired"}, channels=tap)
    assert abs(b.Eb - omega0(OFFICE)) <= 0.02 * omega0(OFFICE)
    assert b.sigma_n2 == 0.0 and b.sigma_mui2 == 0.0


def test_decomposition_with_nothing_selected_is_zero():
    b = estimate_variance_decomposition(cfg(), 3, 1000, components=set())
    assert all(v == 0.0 for v in b.as_dict().values())


def test_decomposition_rejects_small_runs_and_unknown_components():
    with pytest.raises(ValueError):
        estimate_variance_decomposition(cfg(), 0, 999)
    with pytest.raises(ValueError):
        estimate_variance_decomposition(cfg(), 0, 1000, components={"isi", "fading"})


@pytest.mark.parametrize("channel,frame,rx", [(OFFICE, F30, CONVENTIONAL_RX), (OFFICE, F30, PARTIAL_RX),
                                              (RESIDENTIAL, F15, CONVENTIONAL_RX)])
def test_interference_terms_within_a_small_factor_of_simulation(channel, frame, rx):
    c = cfg(channel, frame, n_interferers_Nu=3, N0=0.01, receiver=rx)
    a = analytic_breakdown(c)
    e = estimate_variance_decomposition(c, 4, 3000)
    assert 0.5 <= a.sigma_iasi2 / e.sigma_iasi2 <= 2.0
    assert 1 / 3 <= a.sigma_mui2 / e.sigma_mui2 <= 3.0
    if e.sigma_isi2 > 0:
        assert 1 / 3 <= a.sigma_isi2 / e.sigma_isi2 <= 3.0
