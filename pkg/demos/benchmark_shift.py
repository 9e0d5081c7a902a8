"""Frequency shift of the cantilever for a spin following B_ef anti-parallel and parallel.

    python3 demos/benchmark_shift.py
"""

import math

from oscarsim.analysis import crossing_intervals, spin_field_projection
from oscarsim.estimates import dimensionless_frequency_shift
from oscarsim.params import SimParams
from oscarsim.schrodinger import EvolutionSpec, evolve, initial_benchmark_state

sim = SimParams(eps=10, eta=0.3, A=13, n_max=160)
spec = EvolutionSpec(sim, 40 * math.pi, integrator="expm")
print(f"closed form |dw| = {dimensionless_frequency_shift(sim.eps, sim.eta, sim.A):.4e}")
for name, theta in (("anti-parallel", 0.0), ("parallel", math.pi)):
    rec, _ = evolve(initial_benchmark_state(sim, theta), spec)
    rep = crossing_intervals(rec)
    proj = spin_field_projection(rec, sim).projection
    print(f"{name:>14}: dw = {rep.implied_domega:+.4e}, mean half-period shift {rep.mean_shift:+.5f}, "
          f"projection in [{proj.min():+.4f}, {proj.max():+.4f}]")
