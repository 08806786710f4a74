"""Named desk-scale experiments and the table sweeps built on them.

Each preset is INI text for :func:`fempinn.config.parse_config`. Budgets are
reduced from the full-scale studies (40k to 100k Adam iterations, width 128
on a GPU) so that every preset finishes on one laptop core; the notes say
what each preset tracks and how it was shrunk.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bench import ode_convergence, output_root, run
from .config import ExperimentConfig, parse_config, to_ini
from .errors import InvalidArgument

PRESETS = {
    "convection-quick": ("Convection beta=10, quadratic N=16, 2000 iterations (smoke run).", """
[problem]
name = convection
beta = 10
[basis]
family = lagrange-p2
n = 16
[network]
width = 128
depth = 4
[sampling]
n_r = 200
mesh = true
[optimizer]
iterations = 2000
[evaluation]
grid = 256,101
[run]
name = convection-quick
"""),
    "convection-desk": ("Convection beta=10, quadratic N=16, mesh 200, 20k iterations "
                        "(full scale: mesh 400, 40k iterations).", """
[problem]
name = convection
beta = 10
[basis]
family = lagrange-p2
n = 16
[network]
width = 128
depth = 4
[sampling]
n_r = 200
mesh = true
[optimizer]
iterations = 20000
[evaluation]
grid = 256,101
[run]
name = convection-desk
"""),
    "allen-cahn": ("Allen-Cahn 1-D, quadratic N=10, two segments, width 64, 20k iterations per "
                   "segment (full scale: width 128, 100k iterations).", """
[problem]
name = allen-cahn-1d
[basis]
family = lagrange-p2
n = 10
[marching]
segments = 2
[network]
width = 64
depth = 4
[sampling]
n_r = 1000
mesh = true
[optimizer]
iterations = 20000
[evaluation]
grid = 512,201
[run]
name = allen-cahn
"""),
    "heat-peak-adaptive": ("Heat peak beta=200, collocation with 20 cubic splines, 5 adaptivity "
                           "iterations of 500 points; 2000 PDE and 300 density epochs per iteration, "
                           "width 64 (full scale: 40k and 5k epochs, 5x128).", """
[problem]
name = heat-2d-peak
beta = 200
[basis]
family = spline-c2
n = 19
[projection]
kind = collocation
[network]
width = 64
depth = 4
[sampling]
n_r = 1000
[optimizer]
iterations = 2000
lr = 3e-3
[adaptive]
enabled = true
n_adaptive = 5
n_new = 500
density_epochs = 300
[evaluation]
grid = 64,51
[run]
name = heat-peak-adaptive
"""),
    "heat-peak-1000": ("Heat peak beta=1000, Galerkin with 21 quadratic functions, adaptive "
                       "sampling; reduced epochs as in heat-peak-adaptive, lr 1e-3 and density lr 1e-2.", """
[problem]
name = heat-2d-peak
beta = 1000
[basis]
family = lagrange-p2
n = 20
[projection]
kind = galerkin
[network]
width = 64
depth = 4
[sampling]
n_r = 1000
[optimizer]
iterations = 2000
lr = 1e-3
[adaptive]
enabled = true
n_adaptive = 5
n_new = 500
density_epochs = 300
density_lr = 1e-2
[evaluation]
grid = 64,51
[run]
name = heat-peak-1000
"""),
    "parabolic-ball": ("Variable-coefficient parabolic problem in the 5-D unit ball, quadratic N=10, "
                       "mini-batches of 1000 (full scale: d=20, 100k points, 40k iterations).", """
[problem]
name = parabolic-varcoef
dim = 5
omega = 3
[basis]
family = lagrange-p2
n = 10
[network]
width = 64
depth = 4
[sampling]
n_r = 5000
[optimizer]
iterations = 3000
batches_r = 5
[evaluation]
grid = 51
points = 2000
[run]
name = parabolic-ball
"""),
    "allen-cahn-ball": ("Allen-Cahn in the 5-D unit ball, quadratic Galerkin with N=10, "
                        "mini-batches of 1000 (full scale: d=20, 100k points, 40k iterations).", """
[problem]
name = allen-cahn-ball
dim = 5
omega = 3
[basis]
family = lagrange-p2
n = 10
[network]
width = 64
depth = 4
[sampling]
n_r = 5000
[optimizer]
iterations = 3000
batches_r = 5
[evaluation]
grid = 51
points = 2000
[run]
name = allen-cahn-ball
"""),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return parse_config(PRESETS[name][1])
    except KeyError:
        raise InvalidArgument(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def preset_text(name: str) -> str:
    return to_ini(preset(name))


# -- table sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    label: str
    overrides: dict         # section -> {key: value}
    reference: float | None  # full-scale reference value, when one exists


@dataclass(frozen=True)
class Sweep:
    description: str
    base: str | None
    points: tuple
    expect: str             # "decreasing" or "rate"


# The full-scale reference runs count quadratic elements as N, while configs count
# basis functions minus one (two per quadratic element). Sweeps that carry a
# reference value therefore set the element count directly.
SWEEPS = {
    "convection-n-sweep": Sweep(
        "Convection beta=10, quadratic Galerkin, 8 and 16 elements; full-scale reference values at 40k "
        "iterations.",
        "convection-desk",
        (SweepPoint("elements=8", {"basis": {"n": None, "elements": 8}}, 1.55e-2),
         SweepPoint("elements=16", {"basis": {"n": None, "elements": 16}}, 3.52e-3)),
        "decreasing"),
    "convection-beta50": Sweep(
        "Convection beta=50, quadratic Galerkin, 32 and 64 elements; full-scale reference values at 40k "
        "iterations.",
        "convection-desk",
        (SweepPoint("elements=32", {"problem": {"params": {"beta": 50.0}}, "basis": {"n": None, "elements": 32}},
                    3.83e-2),
         SweepPoint("elements=64", {"problem": {"params": {"beta": 50.0}}, "basis": {"n": None, "elements": 64}},
                    5.58e-3)),
        "decreasing"),
    "allen-cahn-segments": Sweep(
        "Allen-Cahn, 10 quadratic elements, one versus two time segments; full-scale reference "
        "values at 100k iterations.",
        "allen-cahn",
        (SweepPoint("segments=1", {"marching": {"segments": 1}, "basis": {"n": None, "elements": 10}}, 1.95e-2),
         SweepPoint("segments=2", {"marching": {"segments": 2}, "basis": {"n": None, "elements": 10}}, 3.58e-3)),
        "decreasing"),
    "ode-convergence": Sweep(
        "u' + u = f with u = t exp(-t): sup-norm error ratio under mesh halving, expected 2^(p+1).",
        None,
        (SweepPoint("lagrange-p1 galerkin", {"family": "lagrange-p1", "projection": "galerkin"}, 4.0),
         SweepPoint("lagrange-p1 collocation", {"family": "lagrange-p1", "projection": "collocation"}, 4.0),
         SweepPoint("lagrange-p2 galerkin", {"family": "lagrange-p2", "projection": "galerkin"}, 8.0),
         SweepPoint("lagrange-p2 collocation", {"family": "lagrange-p2", "projection": "collocation"}, 8.0)),
        "rate"),
}


def sweep_config(name: str, point: SweepPoint, iterations: int | None = None) -> ExperimentConfig:
    sweep = SWEEPS[name]
    config = preset(sweep.base)
    overrides = dict(point.overrides)
    if "problem" in overrides:
        params = dict(config.problem.params)
        params.update(overrides["problem"].get("params", {}))
        overrides["problem"] = {"params": params}
    if iterations is not None:
        overrides.setdefault("optimizer", {})
        overrides["optimizer"] = dict(overrides["optimizer"], iterations=iterations)
    tag = point.label.replace("=", "").replace(" ", "-")
    overrides["run"] = {"name": f"{name}/{tag}"}
    if "basis" in overrides:
        overrides["basis"] = dict(overrides["basis"])
    return config.with_values(**overrides)


def reproduce_table(name: str, out_root=None, iterations: int | None = None) -> list[dict]:
    """Run a sweep and write ``<root>/<name>/table.csv`` with measured and reference columns.

    ``iterations`` overrides the per-run budget (for quick looks).
    """
    if name not in SWEEPS:
        raise InvalidArgument(f"unknown sweep {name!r}; expected one of {sorted(SWEEPS)}")
    sweep = SWEEPS[name]
    root = output_root(out_root)
    rows = []
    for point in sweep.points:
        start = time.perf_counter()
        if sweep.expect == "rate":
            _, ratios = ode_convergence(point.overrides["family"], point.overrides["projection"])
            measured = float(ratios[-1])
            ok = abs(measured - point.reference) <= 0.2 * point.reference
            rows.append({"setting": point.label, "measured": measured, "reference": point.reference,
                         "within_tolerance": ok, "seconds": time.perf_counter() - start})
            continue
        config = sweep_config(name, point, iterations)
        report = run(config, out_dir=root / config.run.name)
        rows.append({"setting": point.label, "measured": report.relative_l2, "reference": point.reference,
                     "failed": report.failed, "seconds": report.wall_clock})
    if sweep.expect == "decreasing":
        errs = [r["measured"] for r in rows]
        trend = bool(np.all(np.diff(errs) < 0))
        for r in rows:
            r["trend_matches"] = trend
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    fields = sorted({k for r in rows for k in r}, key=lambda k: ["setting", "measured", "reference"].index(k)
                    if k in ("setting", "measured", "reference") else 3)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows
