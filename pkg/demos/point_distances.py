"""Free-space norm of a dipole against the distance it should equal.

For a few point pairs in the square (-2, 2)^2 the minimal-flow value of
delta(a) - delta(b) is printed next to ||a - b|| for each norm, together
with the certified lower bound from the potential.

    python demos/point_distances.py [resolution]
"""

import sys

import numpy as np

from freeflow.geometry import DomainSpec, NormSpec, norm_eval
from freeflow.measure import PointMeasure
from freeflow.solver import solve_measure


def main(resolution=64):
    square = DomainSpec("box", 2, {"lo": (-2, -2), "hi": (2, 2)})
    pairs = [((1.0, 0.0), (-1.0, 0.0)), ((0.5, 0.5), (-1.0, 1.2)), ((-1.5, -1.5), (1.5, 1.0))]
    print(f"{'norm':>5} {'a':>12} {'b':>12} {'||a-b||':>9} {'flow':>9} {'lower':>9} {'rel err':>8}")
    for kind in ("p1", "p2", "pinf"):
        spec = NormSpec(kind, 2)
        for a, b in pairs:
            rep = solve_measure(PointMeasure.from_atoms([(a, 1.0), (b, -1.0)]), square, spec, resolution).report
            exact = norm_eval(spec, np.subtract(a, b))
            print(f"{kind:>5} {str(a):>12} {str(b):>12} {exact:9.4f} {rep.value:9.4f} {rep.lower_bound:9.4f} "
                  f"{abs(rep.value - exact) / exact:8.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 64)
