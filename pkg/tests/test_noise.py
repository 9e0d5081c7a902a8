import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscarsim.noise import RfGateSchedule, effective_eps, make_rng, sample_telegraph
from oscarsim.params import SimParams
from oscarsim.schrodinger import EvolutionSpec, evolve, initial_benchmark_state


@pytest.fixture(scope="module")
def long_process():
    return sample_telegraph(1.0, 1.0, 3, 1e5)


def test_zero_amplitude_is_silent():
    p = sample_telegraph(0.0, 0.6, 1, 50)
    assert np.all(p.value(np.linspace(0, 50, 500)) == 0)


def test_same_seed_same_process():
    a = sample_telegraph(0.3, 0.628, 99, 200)
    b = sample_telegraph(0.3, 0.628, 99, 200)
    assert np.array_equal(a.flip_times, b.flip_times) and a.initial_sign == b.initial_sign
    c = sample_telegraph(0.3, 0.628, 100, 200)
    assert not np.array_equal(a.flip_times, c.flip_times)


def test_frozen_flip_times():
    # guards the documented generator (Philox) against silent changes
    p = sample_telegraph(0.5, 1.0, 2024, 5)
    rng = make_rng(2024)
    sign = 1 if rng.integers(0, 2) == 0 else -1
    steps = rng.uniform(0.75, 1.25, size=int(5 / 1.0) + 16)
    expect = np.cumsum(steps)
    assert p.initial_sign == sign
    assert np.array_equal(p.flip_times, expect[expect < 5])
    assert p.initial_sign == -1
    assert p.flip_times.tolist() == pytest.approx(
        [1.0594917575412262, 1.8288489442366807, 2.9242177142809007, 3.997851808425925,
         4.956845958937139], rel=1e-12)


def test_interval_statistics(long_process):
    iv = np.diff(long_process.flip_times)
    assert len(iv) >= 1e5 - 100
    assert abs(iv.mean() - 1.0) < 0.005
    assert iv.min() >= 0.75 and iv.max() <= 1.25


def test_values_two_level_and_right_continuous():
    p = sample_telegraph(0.3, 1.0, 5, 30)
    v = p.value(np.linspace(0, 30, 3001))
    assert set(np.unique(v)) <= {-0.3, 0.3}
    t0 = p.flip_times[0]
    assert p.value(t0) == -p.value(t0 - 1e-9)
    assert p.value(0.0) == 0.3 * p.initial_sign


def test_autocorrelation_decays(long_process):
    t = np.arange(0, 1e5, 0.05)
    v = long_process.value(t)

    def corr(lag):
        k = int(round(lag / 0.05))
        return float(np.mean(v[:-k] * v[k:]))

    assert corr(3.0) < 0.2
    env = [abs(corr(lag)) for lag in (1, 2, 3, 5, 10, 20, 40)]
    assert all(b < a for a, b in zip(env, env[1:]))
    assert env[-2] < 0.2


def test_invalid_telegraph_arguments():
    with pytest.raises(ValueError):
        sample_telegraph(-1, 1, 0, 1)
    with pytest.raises(ValueError):
        sample_telegraph(1, 1, 0, 0)


def test_empty_schedule_keeps_eps():
    assert effective_eps(3.0, 10.0, None) == 10.0
    assert effective_eps(3.0, 10.0, RfGateSchedule()) == 10.0


def test_pi_pulse_window():
    t0 = 2.0
    g = RfGateSchedule.pi_pulse(t0)
    assert effective_eps(t0 + math.pi / 2, 10, g) == 0
    assert effective_eps(t0 + math.pi + 1e-9, 10, g) == 10
    assert effective_eps(t0, 10, g) == 0
    assert RfGateSchedule.half_pi_pulse(t0).windows == ((t0, math.pi / 2),)


def test_periodic_window_count():
    g = RfGateSchedule.periodic(10, 100)
    assert len(g.windows) == 10
    assert g.edges()[:2] == [0.0, math.pi]


def test_schedule_validation():
    with pytest.raises(ValueError):
        RfGateSchedule(((0, 2), (1, 2)))
    with pytest.raises(ValueError):
        RfGateSchedule(((0, -1),))
    with pytest.raises(ValueError):
        RfGateSchedule.periodic(1, 10)
    with pytest.raises(ValueError):
        RfGateSchedule(anchor="middle")


@settings(max_examples=8, deadline=None)
@given(start=st.floats(0, 2), dur=st.floats(0.1, 1.5), seed=st.integers(0, 2**64 - 1))
def test_gating_and_noise_conserve_norm(start, dur, seed):
    sim = SimParams(eps=4, eta=0.3, A=3, Delta0=0.4, n_max=40)
    spec = EvolutionSpec(sim, 4.0, sample_every=0.25, integrator="expm", seed=seed,
                         gates=RfGateSchedule(((start, dur),)))
    rec, final = evolve(initial_benchmark_state(sim, 1.0), spec)
    assert abs(final.norm() - rec.norm[0]) < 1e-10
