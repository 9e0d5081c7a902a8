import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from oscarsim.estimates import (SATURATED, adiabaticity_window, collapse_decoherence,
                                crossing_shift_estimate, dimensionless_frequency_shift,
                                estimate_report, frequency_shift, jump_chain, mean_field_spin,
                                thermal_noise)
from oscarsim.params import SimParams, to_dimensionless

from conftest import relerr


def test_frequency_shift_reference(reference):
    fs = frequency_shift(reference)
    assert fs.dfc_rel < 0
    assert relerr(fs.dfc_rel, -4.7e-7) < 0.03
    assert relerr(abs(fs.dfc_abs), 3.1e-3) < 0.03


def test_frequency_shift_simplified_form_close_at_table_values(reference):
    fs = frequency_shift(reference)
    assert relerr(fs.dkc_simplified, fs.dkc) < 0.003


def test_simplified_form_converges_as_gradient_dominates(reference):
    gaps = []
    for ratio in np.logspace(1, 5, 9):
        p = replace(reference, G=ratio * reference.B1 / reference.A_lab)
        fs = frequency_shift(p)
        gaps.append(relerr(fs.dkc_simplified, fs.dkc))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-9


def test_decoupled_limit_has_no_shift(reference):
    fs = frequency_shift(replace(reference, G=1e-30))
    assert abs(fs.dfc_rel) < 1e-40
    assert dimensionless_frequency_shift(10, 0, 13) == 0


def test_dimensionless_shift_values():
    assert relerr(dimensionless_frequency_shift(10, 0.3, 13), 7.88e-3) < 1e-3
    assert relerr(dimensionless_frequency_shift(1270, 0.078, 1.2e5), 4.6e-7) < 0.03


def _dimensionless_from_lab(p):
    s = to_dimensionless(p)
    return dimensionless_frequency_shift(s.eps, s.eta, s.A)


def test_lab_and_dimensionless_shift_relation(reference):
    # the lab form carries B1**2 where the dimensionless form has 2*B1**2
    for scale in (1.0, 0.1, 3.0):
        p = replace(reference, B1=scale * reference.B1, f_R=None)
        lab = abs(frequency_shift(p).dfc_rel)
        ga2, b2 = (p.G * p.A_lab) ** 2, p.B1**2
        assert relerr(lab / _dimensionless_from_lab(p), math.sqrt((ga2 + 2 * b2) / (ga2 + b2))) < 1e-9


def test_lab_and_dimensionless_shift_agree_without_rf_term(reference):
    p = replace(reference, B1=reference.B1 * 1e-6, f_R=None)
    assert relerr(abs(frequency_shift(p).dfc_rel), _dimensionless_from_lab(p)) < 1e-6


@pytest.mark.xfail(strict=True, reason="printed lab form and dimensionless form differ by the B1 term (0.24%)")
def test_lab_and_dimensionless_shift_agree_at_reference(reference):
    assert relerr(abs(frequency_shift(reference).dfc_rel), _dimensionless_from_lab(reference)) < 1e-6


def test_adiabaticity_reference(reference):
    w = adiabaticity_window(reference)
    assert relerr(w.lower_ratio, 14) < 0.03
    assert relerr(w.upper_ratio, 1270) < 0.01
    assert w.full_reversal and w.adiabatic


def test_adiabaticity_benchmark_violates_full_reversal():
    s = SimParams(eps=10, eta=0.3, A=13)
    w = adiabaticity_window(s)
    assert w.lower_ratio * s.eps == pytest.approx(7.8)
    assert not w.full_reversal
    assert w.adiabatic


def test_adiabaticity_vanishing_amplitude(reference):
    w = adiabaticity_window(replace(reference, A_lab=1e-30))
    assert not w.full_reversal and not w.adiabatic


def test_thermal_noise_reference(reference):
    th = thermal_noise(reference)
    assert relerr(th.x_rms, 68e-12) < 0.03
    assert relerr(th.F_rms, 1.6e-18) < 0.03


@pytest.mark.xfail(strict=True, reason="1.4e-7 is the two-figure rounding of 1.357e-7")
def test_thermal_frequency_noise_within_three_percent(reference):
    assert relerr(thermal_noise(reference).dfcT_rel, 1.4e-7) < 0.03


def test_thermal_frequency_noise_at_quoted_precision(reference):
    assert float(f"{thermal_noise(reference).dfcT_rel:.2g}") == 1.4e-7


def test_thermal_noise_scaling(reference):
    cold = thermal_noise(replace(reference, T_lab=1e-300))
    assert cold.x_rms < 1e-150 and cold.F_rms < 1e-150 and cold.dfcT_rel < 1e-150
    base = thermal_noise(reference)
    double = thermal_noise(replace(reference, A_lab=2 * reference.A_lab))
    assert relerr(double.dfcT_rel, base.dfcT_rel / 2) < 1e-12
    hot = thermal_noise(replace(reference, T_lab=4 * reference.T_lab))
    assert relerr(hot.x_rms, 2 * base.x_rms) < 1e-12


def test_decoherence_reference(reference):
    d = collapse_decoherence(reference)
    assert relerr(d.X_q, 85e-15) < 0.02
    assert relerr(d.t_d, 1.9e-6) < 0.05
    assert relerr(collapse_decoherence(reference, 2 * d.X_q).t_d, d.t_d / 4) < 1e-12
    with pytest.raises(ValueError):
        collapse_decoherence(reference, 0.0)


def test_jump_chain_reference(reference):
    c = jump_chain(reference)
    assert relerr(c.A_RT, 75e-15) < 0.05
    assert relerr(c.dtheta0, 6.8e-4) < 0.05
    assert relerr(c.dt1, 5.8e-6) < 0.05
    assert relerr(c.t_jump, 14) < 0.05
    assert 0 <= c.P_jump <= 1


def test_jump_time_independent_of_collapse_interval(reference):
    T_c = reference.T_c
    times = [jump_chain(reference, k * T_c).t_jump for k in (1, 10, 100)]
    assert max(times) / min(times) - 1 < 1e-9
    c = jump_chain(reference)
    closed = reference.A_lab / (1.7 * reference.gamma * reference.G * c.A_RT**2)
    assert relerr(c.t_jump, closed) < 1e-9
    with pytest.raises(ValueError):
        jump_chain(reference, 0.0)


def test_jump_chain_cold_limit_saturates(reference):
    c = jump_chain(replace(reference, T_lab=1e-320))
    assert c.A_RT < 1e-150
    assert c.t_jump == SATURATED and c.saturated


def test_crossing_shift_estimate(reference):
    cs = crossing_shift_estimate(reference)
    assert relerr(cs.rel_change, 2e-5) < 0.2
    assert cs.dt_j == cs.dt_c
    assert crossing_shift_estimate(reference, 0.5, 0.5).dt_j == 0
    assert relerr(cs.dt_c, math.pi * 2 * math.pi * 3.1e-3 / reference.omega_c**2) < 0.03
    with pytest.raises(ValueError):
        crossing_shift_estimate(reference, 0.7, 0.7)


def test_mean_field_spin(reference):
    assert mean_field_spin(reference, 0.0) == (0.0, 0.0)
    sz, _ = mean_field_spin(reference, reference.A_lab)
    assert sz == pytest.approx(-14.3333 / math.sqrt(14.3333**2 + 1), rel=1e-4)
    assert relerr(sz, -14 / math.sqrt(197)) < 0.001
    far, _ = mean_field_spin(reference, 1e6 * reference.A_lab)
    assert far == pytest.approx(-1.0, abs=1e-9)


def test_report_collects_everything(reference):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = estimate_report(reference)
    d = r.to_dict()
    assert d["dfc_rel"] == frequency_shift(reference).dfc_rel
    assert d["t_jump"] == jump_chain(reference).t_jump
    table = r.format_table()
    assert len(table.splitlines()) == len(d)
    assert "t_jump" in table and " s" in table


def test_report_warns_outside_window(reference):
    with pytest.warns(UserWarning, match="adiabatic"):
        estimate_report(replace(reference, G=reference.G / 100))


def test_unit_rescaling_of_report(reference):
    a = estimate_report(reference)
    b = estimate_report(replace(reference, T_lab=4 * reference.T_lab))
    assert relerr(b.x_rms, 2 * a.x_rms) < 1e-12
    assert relerr(b.t_d, a.t_d / 4) < 1e-12
