"""On an interval the optimal flow for delta(x) is the indicator of (0, x).

Plots the computed flow next to that indicator, and the potential, which is
1-Lipschitz and rises by |x| between 0 and x.  Writes interval_flow.png next to this script if matplotlib is
available, otherwise prints a coarse table.
"""

from pathlib import Path

import numpy as np

from freeflow.geometry import DomainSpec, NormSpec
from freeflow.measure import PointMeasure
from freeflow.solver import solve_measure

interval = DomainSpec("box", 1, {"lo": (-2,), "hi": (2,)})
x = 1.2
sol = solve_measure(PointMeasure.from_atoms([((x,), 1.0)], 1), interval, NormSpec("p2", 1), 256)
t = sol.grid.centers()[0]
inside = sol.grid.mask
flow = sol.flow.values[0]
chi = ((t > 0) & (t < x)).astype(float)
print(f"value {sol.report.value:.5f} (exact {x}), L1 distance to indicator "
      f"{np.sum(np.abs(flow - chi)) * sol.grid.h:.2e}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    for k in range(0, t.size, 16):
        print(f"{t[k]:7.3f} {flow[k]:7.3f} {chi[k]:4.0f}")
else:
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(6, 5))
    ax0.plot(t[inside], flow[inside], label="flow")
    ax0.plot(t[inside], chi[inside], "--", label="indicator of (0, x)")
    ax0.legend()
    ax1.plot(t[inside], sol.potential.values[inside], label="potential")
    ax1.legend()
    out = Path(__file__).with_name("interval_flow.png")
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
