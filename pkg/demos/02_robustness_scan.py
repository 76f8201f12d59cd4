"""
Information against disturbance
===============================

Eve entangles an ancilla with each returning qubit.  The exact oracle
enumerates every branch of a four-round run and reports what she learns
about a sifted bit next to the chance that a CTRL check fires.
"""

import math

from sqkd import exact_distribution, exact_eve_info, robustness_scan
from sqkd.harness import rows_to_csv

# %%
# A single angle: Eve's advantage is half the trace distance between her
# two conditional ancilla states, |sin theta| / 2.
dist = exact_distribution("p1", "probe:pi/4:ret", n_rounds=4)
print("eve info     %.6f (|sin t|/2 = %.6f)" % (exact_eve_info(dist), math.sin(math.pi / 4) / 2))
print("detection    %.6f" % dist.detection_probability())
print("branches     %d per round, %d per run" % (len(dist.round_atoms), dist.total_atoms()))

# %%
# The full scan over [0, pi/2].  A row with information and no disturbance
# would raise RobustnessFinding.
for protocol in ("p1", "p2"):
    for family in ("rot", "phase"):
        rows = robustness_scan(protocol, family)
        print(f"--- {protocol} / {family}")
        print(rows_to_csv(rows[::5], ["theta", "info", "disturbance"]), end="")
