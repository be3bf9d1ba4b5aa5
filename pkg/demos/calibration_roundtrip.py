"""Moving between a radius and a chance constraint.

Start from (eps, delta), find the equivalent radius, then map that
radius back to a threshold at the same eps.
"""

import numpy as np

from ambiq import divergence as dv
from ambiq.calibrate import equivalent_delta, equivalent_rho
from ambiq.cco import ChanceSpec
from ambiq.core import FeasibleSet
from ambiq.moments import MomentModel

sd = np.array([0.10, 0.15, 0.20])
corr = np.full((3, 3), 0.2) + 0.8 * np.eye(3)
model = MomentModel("normal", [0.04, 0.07, 0.10], corr * np.outer(sd, sd))
box = FeasibleSet(-1.0)   # no position below -100%

spec = ChanceSpec(eps=0.05, delta=0.2)
r = equivalent_rho(model, dv.KL, spec, box)
print(f"rho = {r.rho:.6f} after {r.iterations} bisection steps (value {r.dro_value:.6f})")

back = equivalent_delta(model, dv.KL, r.rho, spec.eps, box)
print(f"delta back = {back.delta:.8f}  (started at {spec.delta})")
