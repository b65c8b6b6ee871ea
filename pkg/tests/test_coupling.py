import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdc_herald.coupling import (
    DegenerateGroupIndexError,
    FocusConfig,
    ModeCouplingProbabilities,
    ProbabilityBoundWarning,
    ZeroEmissionWarning,
    ab_coefficients,
    derive_xi_b,
    emission_rates,
    eta_c_closed_form,
    eta_c_from_probabilities,
    focal_parameter,
    heralding_efficiencies,
    rate_prefactor,
    validity_check,
    waist_from_focal_parameter,
)
from spdc_herald.dispersion import CrystalSpec, SellmeierModel, WaveTriple, phase_mismatch, ppktp_type2

xi = st.floats(0.01, 10.0)


def bare(crystal, waves):
    return phase_mismatch(crystal, waves).bare


def test_focal_parameter_unit_waist():
    L, k = 0.01, 1.4e7
    assert focal_parameter(L, k, math.sqrt(L / k)) == pytest.approx(1.0, rel=1e-15)


def test_focal_parameter_rejects_nonpositive():
    with pytest.raises(ValueError):
        focal_parameter(0.01, 1e7, 0.0)


def test_pump_waist_121um(crystal, waves):
    assert focal_parameter(crystal.length, waves.k_p, 121e-6) == pytest.approx(48.6e-3, rel=0.02)


def test_collection_waist_47um(crystal, waves):
    assert focal_parameter(crystal.length, waves.k_a, 47e-6) == pytest.approx(0.63, rel=0.05)


def test_waist_round_trip(crystal, waves):
    f = FocusConfig.from_waists(crystal.length, waves, 167e-6, 110e-6)
    w = f.waists(crystal.length, waves)
    assert w == pytest.approx((167e-6, 110e-6, 110e-6), rel=1e-12)


def test_derive_xi_b_symmetric():
    assert derive_xi_b(0.4, 7e6, 7e6) == 0.4


def test_derive_xi_b_equals_other_index_focal_parameter(crystal, waves):
    w = waist_from_focal_parameter(crystal.length, waves.k_a, 0.63)
    expected = focal_parameter(crystal.length, waves.k_b, w)
    assert derive_xi_b(0.63, waves.k_a, waves.k_b) == pytest.approx(expected, rel=1e-12)
    assert derive_xi_b(0.63, waves.k_a, waves.k_b) == pytest.approx(0.63 * waves.n_a / waves.n_b, rel=1e-12)


def test_derive_xi_b_at_operating_point(waves):
    assert 0.17 <= derive_xi_b(0.19, waves.k_a, waves.k_b) <= 0.21


def symmetric_waves():
    return WaveTriple(780e-9, 1560e-9, 1560e-9, 1.8, 1.8, 1.8, 1.9, 1.8)


def test_ab_symmetric_degenerate_algebra():
    c = ab_coefficients(symmetric_waves(), 0.0, FocusConfig(0.5, 0.5, 0.5))
    assert c.A_a == pytest.approx(math.sqrt(3), rel=1e-15)
    assert c.A_b == pytest.approx(math.sqrt(3), rel=1e-15)
    assert c.A_plus == pytest.approx(2.0, rel=1e-15)
    assert c.B_a == pytest.approx(c.A_a, rel=1e-15)
    assert c.B_plus == pytest.approx(2.0, rel=1e-15)


def test_b_plus_uses_reciprocal_ratios(waves):
    # pins the printed form: A_+ carries xi_a/xi_p, B_+ carries xi_p/xi_a
    f = FocusConfig(0.3, 2.0, 0.7)
    c = ab_coefficients(waves, 0.0, f)
    kp, ka, kb = waves.k_p, waves.k_a, waves.k_b
    assert c.A_plus == pytest.approx(1 + ka / kp * f.xi_a / f.xi_p + kb / kp * f.xi_b / f.xi_p, rel=1e-14)
    assert c.B_plus == pytest.approx(1 + ka / kp * f.xi_p / f.xi_a + kb / kp * f.xi_p / f.xi_b, rel=1e-14)
    assert c.B_a == pytest.approx(c.A_a, rel=1e-14)
    assert c.B_b == pytest.approx(c.A_b, rel=1e-14)


def test_b_close_to_a_at_loose_pump_optimum(crystal, waves):
    f = FocusConfig.tied(0.0284, 0.5326, waves)
    c = ab_coefficients(waves, bare(crystal, waves), f)
    assert abs(c.B_a / c.A_a - 1) < 0.02
    assert abs(c.B_b / c.A_b - 1) < 0.02


def test_ab_swap_symmetry(crystal, waves):
    f = FocusConfig(0.1, 0.4, 0.9)
    dk = bare(crystal, waves)
    c = ab_coefficients(waves, dk, f)
    s = ab_coefficients(waves.swapped(), dk, f.swapped())
    assert (s.A_a, s.B_a, s.A_b, s.B_b) == pytest.approx((c.A_b, c.B_b, c.A_a, c.B_a), rel=1e-14)
    assert (s.A_plus, s.B_plus) == pytest.approx((c.A_plus, c.B_plus), rel=1e-14)


def test_mismatch_at_or_above_kp_rejected(waves):
    with pytest.raises(ValueError, match="below k_p"):
        ab_coefficients(waves, waves.k_p, FocusConfig(1, 1, 1))


def test_zero_deff_gives_zero_rates(waves):
    c = ppktp_type2(d_eff=0.0)
    r = emission_rates(c, waves, FocusConfig.tied(2.84, 3.9, waves))
    assert (r.R_a, r.R_b, r.R_c, r.R_t) == (0.0, 0.0, 0.0, 0.0)


def test_baseline_reference_value(crystal, waves):
    # pinned output of the implemented formulas at the pair-rate peak, xi_p = 2.84
    r = emission_rates(crystal, waves, FocusConfig.tied(2.84, 3.92160850907266, waves))
    assert r.R_c == pytest.approx(72655.5915823368, rel=1e-9)


def test_doubling_deff_quadruples_rates(waves):
    f = FocusConfig.tied(0.0243, 0.19, waves)
    r1 = emission_rates(ppktp_type2(d_eff=1.82e-12), waves, f)
    r2 = emission_rates(ppktp_type2(d_eff=3.64e-12), waves, f)
    assert (r2.R_a, r2.R_b, r2.R_c) == pytest.approx((4 * r1.R_a, 4 * r1.R_b, 4 * r1.R_c), rel=1e-13)


def test_degenerate_group_index_rejected():
    rng = (0.4e-6, 3.5e-6)
    y = SellmeierModel("constant", "Y", (1.8,), rng)
    z = SellmeierModel("constant", "Z", (1.8,), rng)
    c = CrystalSpec(0.01, 46.1e-6, 1e-12, y, z, y)
    w = WaveTriple(780e-9, 1560e-9, 1560e-9, 1.8, 1.8, 1.8, 1.8, 1.8)
    with pytest.raises(DegenerateGroupIndexError):
        emission_rates(c, w, FocusConfig(1, 1, 1), 0.0)


def test_eta_c_from_probabilities_examples():
    assert eta_c_from_probabilities(ModeCouplingProbabilities(0.3, 0.3, 0.3)) == pytest.approx(1.0)
    assert eta_c_from_probabilities(ModeCouplingProbabilities(0.0, 0.2, 0.4)) == 0.0
    with pytest.warns(ProbabilityBoundWarning):
        assert eta_c_from_probabilities(ModeCouplingProbabilities(0.02, 0.04, 0.01)) == pytest.approx(1.0)


def test_eta_c_zero_emission_convention():
    with pytest.warns(ZeroEmissionWarning):
        assert eta_c_from_probabilities(ModeCouplingProbabilities(0.0, 0.0, 0.3)) == 0.0
    with pytest.raises(ValueError, match="zero single-arm"):
        eta_c_from_probabilities(ModeCouplingProbabilities(0.1, 0.0, 0.3))


def test_exclusive_probabilities_add_up():
    p = ModeCouplingProbabilities.from_exclusive(0.05, 0.01, 0.02)
    assert (p.P_a, p.P_b) == pytest.approx((0.06, 0.07))
    assert (p.P_tilde_a, p.P_tilde_b) == pytest.approx((0.01, 0.02))


def test_heralding_examples():
    h = heralding_efficiencies(ModeCouplingProbabilities(0.2, 0.2, 0.2), 1.0, 1.0)
    assert h == pytest.approx((1.0, 1.0, 1.0))
    h = heralding_efficiencies(ModeCouplingProbabilities(0.098, 0.1, 0.099), 1.0, 1.0)
    assert h.herald_b == pytest.approx(0.98)
    p = ModeCouplingProbabilities(0.09, 0.1, 0.095)
    h = heralding_efficiencies(p, 0.8, 0.8)
    assert h.herald_sym == pytest.approx(eta_c_from_probabilities(p) * 0.8, rel=1e-14)
    with pytest.raises(ZeroDivisionError):
        heralding_efficiencies(ModeCouplingProbabilities(0.0, 0.0, 0.1), 1, 1)


def test_validity_default_configuration_clean(crystal, waves):
    f = FocusConfig.tied(0.0243, 0.19, waves)
    assert validity_check(crystal, waves, bare(crystal, waves), f) == []


def test_validity_flags():
    c = ppktp_type2()
    from spdc_herald.dispersion import make_waves

    w = make_waves(c, 780e-9)
    dk = bare(c, w)
    assert any("tight focus" in s for s in validity_check(c, w, dk, FocusConfig(50, 1, 1)))
    short = ppktp_type2(length=0.5e-3)
    assert any("short crystal" in s for s in validity_check(short, w, dk, FocusConfig(1, 1, 1)))
    assert any("phase mismatch" in s for s in validity_check(c, w, 0.1 * w.k_a, FocusConfig(1, 1, 1)))


def test_loose_pump_reaches_high_eta(crystal, waves):
    dk = bare(crystal, waves)
    grid = np.geomspace(0.01, 10, 2001)
    best = max(eta_c_closed_form(waves, dk, FocusConfig.tied(0.0284, x, waves)) for x in grid)
    assert best >= 0.96


@settings(max_examples=200, deadline=None)
@given(xi, xi, xi)
def test_closed_form_matches_rate_ratio(crystal, waves, xp, xa, xb):
    f = FocusConfig(xp, xa, xb)
    dk = bare(crystal, waves)
    r = emission_rates(crystal, waves, f, dk)
    eta = eta_c_closed_form(waves, dk, f)
    assert abs(eta - r.R_c / math.sqrt(r.R_a * r.R_b)) <= 1e-12 * eta


@settings(max_examples=200, deadline=None)
@given(xi, xi, xi)
def test_eta_c_bounded(crystal, waves, xp, xa, xb):
    eta = eta_c_closed_form(waves, bare(crystal, waves), FocusConfig(xp, xa, xb))
    assert 0 < eta <= 1


@settings(max_examples=200, deadline=None)
@given(xi, xi)
def test_pair_rate_below_singles_with_shared_optics(crystal, waves, xp, xa):
    r = emission_rates(crystal, waves, FocusConfig.tied(xp, xa, waves))
    assert 0 <= r.R_c <= min(r.R_a, r.R_b) * (1 + 1e-12)
    assert r.R_t == r.R_a + r.R_b


@settings(max_examples=100, deadline=None)
@given(xi, xi, xi)
def test_swap_symmetry_of_rates(crystal, waves, xp, xa, xb):
    swapped = CrystalSpec(crystal.length, crystal.poling_period, crystal.d_eff, crystal.pump, crystal.b, crystal.a)
    f = FocusConfig(xp, xa, xb)
    dk = bare(crystal, waves)
    r = emission_rates(crystal, waves, f, dk)
    s = emission_rates(swapped, waves.swapped(), f.swapped(), dk)
    assert (s.R_a, s.R_b, s.R_c) == pytest.approx((r.R_b, r.R_a, r.R_c), rel=1e-12)
    assert s.R_t == pytest.approx(r.R_t, rel=1e-12)


def test_rates_increase_with_arctan_argument(crystal, waves):
    # R * A * B / prefactor is the arctan itself, so it must rise with its argument
    dk = bare(crystal, waves)
    pre = rate_prefactor(crystal, waves)
    xs = np.geomspace(0.01, 10, 60)
    args, ga, gc = [], [], []
    for x in xs:
        f = FocusConfig(0.5, x, x)
        c = ab_coefficients(waves, dk, f)
        r = emission_rates(crystal, waves, f, dk)
        args.append((c.B_a / c.A_a * x, c.B_plus / c.A_plus * x * x / 0.5))
        ga.append(r.R_a * c.A_a * c.B_a / pre)
        gc.append(r.R_c * c.A_plus * c.B_plus / pre)
    args = np.array(args)
    assert np.all(np.diff(args, axis=0) > 0)
    assert np.all(np.diff(ga) > 0) and np.all(np.diff(gc) > 0)
    tiny = emission_rates(crystal, waves, FocusConfig(0.5, 1e-8, 0.5), dk).R_c
    assert tiny < 1e-6 * max(gc) * pre


def test_eta_c_limits(crystal, waves):
    dk = bare(crystal, waves)
    small = eta_c_closed_form(waves, dk, FocusConfig(1.0, 1e-6, 1e-6))
    assert small < 1e-3
    etas = [eta_c_closed_form(waves, dk, FocusConfig(xp, 0.3, 0.3)) for xp in np.geomspace(0.3, 100, 20)]
    assert np.all(np.diff(etas) < 0)


def test_per_mw_scaling(crystal, waves):
    f = FocusConfig.tied(0.1, 0.3, waves)
    r = emission_rates(crystal, waves, f)
    assert r.scaled(40).R_c == pytest.approx(40 * r.R_c)
    assert r.scaled(40).eta_c == pytest.approx(r.eta_c, rel=1e-14)
