import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscarsim.analysis import (crossing_intervals, peak_areas, spin_field_projection,
                               split_time)
from oscarsim.hilbert import PositionGrid
from oscarsim.noise import RfGateSchedule
from oscarsim.params import SimParams
from oscarsim.record import TrajectoryRecord
from oscarsim.schrodinger import EvolutionSpec, evolve, initial_benchmark_state


def sinusoid(omega, t_end=60.0, dt=0.01, amp=13.0):
    t = np.arange(0, t_end, dt)
    return t, amp * np.cos(omega * t)


def synthetic_record(t, x, spin, eps):
    n = len(t)
    z = np.zeros(n)
    return TrajectoryRecord(t, x, z, spin[:, 0], spin[:, 1], spin[:, 2], z + 1, z,
                            np.full(n, float(eps)), z)


def gaussian(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def test_unshifted_sinusoid_has_zero_shifts():
    rep = crossing_intervals(sinusoid(1.0))
    assert np.max(np.abs(rep.shifts)) < 1e-6
    assert abs(rep.implied_domega) < 1e-6
    assert np.all(rep.intervals > 0)


def test_slow_sinusoid_mean_shift():
    dw = 7.9e-3
    rep = crossing_intervals(sinusoid(1 - dw))
    assert rep.mean_shift == pytest.approx(math.pi * dw / (1 - dw), abs=1e-6)
    assert rep.mean_shift == pytest.approx(0.02502, abs=1e-5)
    assert rep.implied_domega == pytest.approx(-dw, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 5e-2), st.sampled_from([-1, 1]))
def test_frequency_offset_recovered(offset, sign):
    rep = crossing_intervals(sinusoid(1 + sign * offset, dt=0.05))
    assert rep.implied_domega == pytest.approx(sign * offset, rel=0.01)


def test_crossing_times_are_sub_sample_accurate():
    t, x = sinusoid(1.0, dt=0.1)
    rep = crossing_intervals((t, x))
    expected = math.pi / 2 + math.pi * np.arange(len(rep.crossing_times))
    assert np.max(np.abs(rep.crossing_times - expected)) < 1e-3


def test_too_few_crossings_rejected():
    with pytest.raises(ValueError, match="crossings"):
        crossing_intervals(sinusoid(1.0, t_end=4.0))
    with pytest.raises(ValueError):
        crossing_intervals((np.arange(3.0), np.ones(3)))


def test_truncated_report_keeps_early_intervals():
    rep = crossing_intervals(sinusoid(1.0, t_end=30))
    short = rep.truncated(10.0)
    assert np.all(short.crossing_times <= 10.0)
    assert len(short.intervals) == len(short.crossing_times) - 1


def test_single_gaussian_peak():
    x = np.arange(-20, 20, 0.05)
    rep = peak_areas(PositionGrid(x, gaussian(x, 1.3, 0.7)))
    assert len(rep.peaks) == 1 and not rep.resolvable
    p = rep.peaks[0]
    assert p.area == pytest.approx(1, abs=1e-3)
    assert p.position == pytest.approx(1.3, abs=1e-3)
    assert p.width == pytest.approx(2.3548 * 0.7, rel=1e-3)


def test_mixture_areas():
    x = np.arange(-20, 20, 0.1)
    P = 0.25 * gaussian(x, -6, 1) + 0.75 * gaussian(x, 6, 1)
    rep = peak_areas(PositionGrid(x, P))
    assert rep.resolvable
    assert [p.area for p in rep.peaks] == pytest.approx([0.25, 0.75], abs=0.01)
    assert sum(p.area for p in rep.peaks) <= 1 + 1e-4


def test_peak_areas_stable_under_grid_refinement():
    def areas(step):
        x = np.arange(-20, 20 + step / 2, step)
        P = 0.4 * gaussian(x, -3, 1.1) + 0.6 * gaussian(x, 4, 0.8)
        return np.array([p.area for p in peak_areas(PositionGrid(x, P)).peaks])

    coarse, fine = areas(0.25), areas(0.125)
    assert np.max(np.abs(fine - coarse) / coarse) < 2e-3


def test_floor_suppresses_small_peaks():
    x = np.arange(-20, 20, 0.1)
    P = gaussian(x, -6, 1) + 0.02 * gaussian(x, 6, 1)
    assert len(peak_areas(PositionGrid(x, P)).peaks) == 1
    assert peak_areas(PositionGrid(x, np.zeros_like(x))).peaks == ()


def test_close_peaks_not_resolvable():
    x = np.arange(-20, 20, 0.05)
    P = 0.5 * gaussian(x, -1.2, 1) + 0.5 * gaussian(x, 1.2, 1)
    assert not peak_areas(PositionGrid(x, P)).resolvable


def test_projection_vector_oracle():
    t = np.linspace(0, 1, 5)
    x = np.array([1.0, 0.0, -2.0, 3.0, 0.0])
    spin = np.array([[0.5, 0, 0], [0, 0, 0.5], [0.3, 0.1, 0.2], [-0.5, 0, 0], [0.5, 0, 0]])
    eps = np.array([2.0, 2.0, 2.0, 2.0, 0.0])
    rec = synthetic_record(t, x, spin, 0.0)
    rec.eps[:] = eps
    rep = spin_field_projection(rec, SimParams(eps=2, eta=0.5, A=1))
    expected = []
    for i in range(4):
        b = np.array([eps[i], 0, x[i]])
        expected.append(b @ spin[i] / np.linalg.norm(b) / np.linalg.norm(spin[i]))
    assert rep.projection[:4] == pytest.approx(expected, abs=1e-12)
    assert np.isnan(rep.projection[4])
    assert list(rep.gaps) == [1.0]
    assert list(rep.breaches) == [t[i] for i in range(4) if abs(expected[i]) < 0.9]


def test_projection_requires_eta():
    t = np.linspace(0, 1, 3)
    rec = synthetic_record(t, np.ones(3), np.ones((3, 3)), 1.0)
    with pytest.raises(ValueError, match="eta"):
        spin_field_projection(rec)


def test_orthogonal_start_has_zero_projection(benchmark_sim):
    rec, _ = evolve(initial_benchmark_state(benchmark_sim, math.pi / 2),
                    EvolutionSpec(benchmark_sim, 0.5, sample_every=0.1, integrator="expm"))
    assert abs(spin_field_projection(rec, benchmark_sim).projection[0]) < 1e-10


def test_half_pi_gate_turns_spin_perpendicular():
    # deep full-reversal regime: 2*eta*A/eps = 13, so the field is nearly along z at the turning point
    sim = SimParams(eps=1, eta=0.5, A=13, n_max=160)
    gates = RfGateSchedule.half_pi_pulse(0.0)
    rec, _ = evolve(initial_benchmark_state(sim),
                    EvolutionSpec(sim, 3.0, sample_every=0.01, gates=gates, integrator="expm"))
    proj = spin_field_projection(rec, sim).projection
    assert proj[0] < -0.99
    first_zero = crossing_intervals(rec, min_crossings=1).crossing_times[0]
    i = int(np.argmin(np.abs(rec.times - first_zero)))
    assert abs(proj[i]) < 0.1


def test_split_time_from_densities():
    x = np.arange(-20, 20, 0.1)
    dens = np.array([gaussian(x, 0, 1), 0.5 * gaussian(x, -5, 1) + 0.5 * gaussian(x, 5, 1)])
    t = np.array([0.0, 1.0])
    rec = synthetic_record(t, np.zeros(2), np.zeros((2, 3)), 1.0)
    rec.densities, rec.grid = dens, x
    assert split_time(rec) == 1.0
    rec.densities = dens[:1].repeat(2, axis=0)
    assert split_time(rec) == math.inf
