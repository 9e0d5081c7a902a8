"""Splitting of P(x) into two branches for a tilted initial spin.

    python3 demos/cat_split.py [theta_in_degrees ...]
"""

import math
import sys

from oscarsim.params import SimParams
from oscarsim.schrodinger import EvolutionSpec, run_cat_split

sim = SimParams(eps=10, eta=0.3, A=13, n_max=160)
spec = EvolutionSpec(sim, 60, integrator="expm", sample_every=0.1)
for deg in map(float, sys.argv[1:] or ["60", "90"]):
    theta = math.radians(deg)
    res = run_cat_split(theta, spec)
    print(f"theta = {deg:5.1f} deg: split at t = {res.split_time:.2f}; "
          f"anti {res.areas.get('anti', float('nan')):.4f} (cos^2 = {math.cos(theta / 2) ** 2:.4f}), "
          f"parallel {res.areas.get('parallel', float('nan')):.4f} (sin^2 = {math.sin(theta / 2) ** 2:.4f})")
