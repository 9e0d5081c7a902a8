"""Decay of the interference peaks of a cantilever cat state under Caldeira-Leggett dynamics.

    python3 demos/decoherence.py
"""

from oscarsim.master import MasterSpec, cat_density, decoherence_time_fit, evolve_master
from oscarsim.params import SimParams

x0 = 8.0
for T, Q in ((40, 1000), (80, 1000), (40, 2000)):
    sim = SimParams(eps=0, eta=0, A=x0, T=T, Q=Q, n_max=96)
    rec, _ = evolve_master(cat_density(x0, 96), MasterSpec(sim, 0.5, sample_every=0.01))
    fit = decoherence_time_fit(rec)
    print(f"T = {T:3d}, Q = {Q}: t_d = {fit.t_d:.4f} (estimate Q/(T (2 x0)^2) = {Q / (T * 4 * x0**2):.4f})")
