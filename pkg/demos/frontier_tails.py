"""Equivalent loss thresholds for a fixed ambiguity radius.

For each tolerance eps we look for the threshold delta whose
chance-constrained optimum equals the robust optimum at rho = 0.27.
A heavier tailed center needs a looser threshold.
"""

import numpy as np

from ambiq.experiments import figure1_frontiers

eps_grid = np.linspace(0.005, 0.05, 10)
curves = figure1_frontiers(eps_grid)

print(f"{'eps':>6} {'normal':>9} {'t3':>9}")
for pn, pt in zip(curves["normal"], curves["t3"]):
    print(f"{pn.eps:6.3f} {pn.delta:9.4f} {pt.delta:9.4f}")
