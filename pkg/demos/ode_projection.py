"""Time projection on a scalar ODE.

Solves u' + u = f with u = t exp(-t) using each time basis, first with the
Petrov-Galerkin test space and then with Gauss collocation, and prints the
sup-norm error as the mesh is halved. Quadratic elements should gain about a
factor 8 per halving and linear ones about 4. Both projections give the
same numbers here: for this linear ODE the Petrov-Galerkin scheme coincides
with collocation at the Gauss points.

    python3 demos/ode_projection.py
"""

import numpy as np

from fempinn.bench import ode_convergence

if __name__ == "__main__":
    for family in ("lagrange-p1", "lagrange-p2"):
        for projection in ("galerkin", "collocation"):
            errors, ratios = ode_convergence(family, projection)
            print(f"{family:12s} {projection:12s} errors " + " ".join(f"{e:.2e}" for e in errors)
                  + "  ratios " + " ".join(f"{r:.2f}" for r in ratios))
