"""Fit the sampling density to a synthetic residual.

The squared residual is a bump exp(-200 (t - 0.7)^2) in time and flat in
space. Cross-entropy training should move most of the temporal mass into
[0.6, 0.8]; the printout shows the mass and the learned pdf on a coarse grid.

    python3 demos/density_fit.py
"""

import numpy as np

from fempinn.adaptive import DensityConfig, train_density
from fempinn.density import JointDensity
from fempinn.problems import make_problem

if __name__ == "__main__":
    prob = make_problem("convection")
    model = JointDensity.for_problem(prob, n_layers=2)
    params, _, losses, _ = train_density(model, model.init(0), None, lambda X, t: np.exp(-200 * (t - 0.7) ** 2),
                                         prob, DensityConfig(epochs=500, lr=1e-2, n_layers=2),
                                         np.random.default_rng(0))
    d = model.temporal(params)
    print(f"cross entropy {losses[0]:.3f} -> {losses[-1]:.3f}")
    print(f"mass in [0.6, 0.8]: {float(d.cdf(0.8) - d.cdf(0.6)):.3f}")
    s = np.linspace(0, 1, 11)
    for si, p in zip(s, np.asarray(d.pdf(s))):
        print(f"  p({si:.1f}) = {p:6.3f} " + "#" * int(round(10 * p)))
