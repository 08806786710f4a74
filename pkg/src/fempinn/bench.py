"""Experiment runner: config in, metrics, histories and checkpoints out.

Every run writes into its own directory under the output root
(``$FEMPINN_OUT`` or ``./runs``):

- ``report.json``: final error, wall clock, file paths, config echo
- ``config.ini``: the config as parsed, sufficient to rerun
- ``loss_history.csv``: loss rows every 100 iterations plus the final iterate
- ``error_history.csv`` and ``samples_<k>.csv``: adaptive runs only
- ``model_seg<k>.ckpt``: one checkpoint per time segment
- ``eval_dump.csv``: coordinates, prediction, exact and abs error (when requested)
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from .adaptive import DensityConfig, adaptive_loop, write_records, write_samples
from .config import ExperimentConfig, parse_config, resolve_constraint, to_dict, to_ini
from .errors import InvalidArgument, TrainingDiverged
from .fieldnet import ConstraintSpec, FieldNet, load_checkpoint, save_checkpoint
from .problems import make_problem
from .projection import assemble_galerkin, build_collocation, ode_solve_direct
from .reference import allen_cahn_solution
from .residual import NetField, relative_l2, uniform_training_set
from .timebasis import make_basis, petrov_test_space
from .trainer import MarchPlan, MarchResult, SegmentModel, TrainConfig, terminal_predictor, time_march, write_history

OUT_ENV = "FEMPINN_OUT"
DEFAULT_ROOT = "runs"


def output_root(override=None) -> Path:
    """``override``, else ``$FEMPINN_OUT``, else ``./runs``."""
    return Path(override or os.environ.get(OUT_ENV) or DEFAULT_ROOT)


@dataclass
class RunReport:
    relative_l2: float
    failed: bool
    message: str
    wall_clock: float
    out_dir: str
    loss_history: str
    error_history: str | None
    checkpoints: list
    config: dict
    error_per_iteration: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


# -- model construction -------------------------------------------------------------

def build_problem(config: ExperimentConfig):
    return make_problem(config.problem.name, **config.problem.params)


def build_plan(config: ExperimentConfig) -> MarchPlan:
    o = config.optimizer
    train = TrainConfig(iterations=o.iterations, lr=o.lr, decay=o.decay, decay_steps=o.decay_steps,
                        n_r=o.batches_r, n_ic=o.batches_ic, n_bc=o.batches_bc,
                        gamma_bc=o.gamma_bc, gamma_ic=o.gamma_ic)
    return MarchPlan(config.marching.segments, config.basis.family, config.n_elements,
                     config.projection.kind, config.projection.test_space, config.projection.K, train)


def build_net(config: ExperimentConfig, problem, n_out: int) -> FieldNet:
    kind = resolve_constraint(config)
    kwargs = {}
    if kind == "periodic-fourier":
        kwargs["period"] = (problem.lower[0], problem.upper[0])
    elif kind == "dirichlet-ball":
        kwargs["radius"] = problem.radius
    elif kind == "dirichlet-box":
        kwargs["box"] = (tuple(problem.lower), tuple(problem.upper))
    pinned = (0,) if config.constraint.pin_initial else ()
    spec = ConstraintSpec(kind, pinned=pinned, initial=problem.initial, **kwargs)
    return FieldNet(problem.dim, n_out, config.network.width, config.network.depth, spec)


def _streams(seed: int):
    """Independent generators for init, data, training, adaptivity and evaluation."""
    children = np.random.SeedSequence(seed).spawn(5)
    init_seed = int(children[0].generate_state(1)[0])
    return (init_seed,) + tuple(np.random.default_rng(c) for c in children[1:])


# -- evaluation -----------------------------------------------------------------------

def evaluation_points(problem, grid=(256, 101), points: int = 10000, seed: int = 0):
    """Tensor grid (interval and box domains) or a seeded random cloud (ball domains), plus times."""
    n_t = grid[-1]
    times = np.linspace(problem.t_start, problem.t_end, n_t)
    if problem.domain == "ball":
        X = problem.sample_interior(np.random.default_rng(seed), points)
        return X, times
    n = grid[0]
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(problem.lower, problem.upper)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, problem.dim)
    return X, times


def exact_values(problem, X, times) -> np.ndarray:
    """Exact (or reference) solution on ``X x times``, shape ``(n, T)``."""
    if problem.exact is not None:
        fn = jax.jit(problem.exact)
        return np.asarray(fn(jnp.asarray(X)[:, None, :], jnp.asarray(times)[None, :]))
    if problem.name == "allen-cahn-1d":
        return allen_cahn_solution(X, times, **problem.params)
    raise InvalidArgument(f"no reference solution for {problem.name}")


def write_dump(path, X, times, pred, exact) -> None:
    """One row per (point, time): coordinates, prediction, exact and absolute error."""
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["t", "prediction", "exact", "abserr"])
        for i in range(X.shape[0]):
            for j in range(times.size):
                w.writerow([repr(float(v)) for v in X[i]]
                           + [repr(float(times[j])), repr(float(pred[i, j])), repr(float(exact[i, j])),
                              repr(float(abs(pred[i, j] - exact[i, j])))])


def evaluate_field(values, problem, X, times, dump=None) -> float:
    """Relative L2 error of ``values(X, times)`` against the exact solution."""
    pred = np.asarray(values(X, times))
    exact = exact_values(problem, X, times)
    if pred.shape != exact.shape:
        raise InvalidArgument(f"prediction shape {pred.shape} does not match {exact.shape}")
    if dump is not None:
        write_dump(dump, X, times, pred, exact)
    return relative_l2(pred, exact)


# -- run ------------------------------------------------------------------------------

def _checkpoint_meta(config, segment, t_span):
    return {"config": json.dumps(to_ini(config)), "segment": segment, "segments": config.marching.segments,
            "t_start": repr(float(t_span[0])), "t_end": repr(float(t_span[1]))}


def run(config: ExperimentConfig, out_dir=None, on_progress=None) -> RunReport:
    """Train, evaluate and write every artifact; training divergence gives a failed report."""
    start = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else output_root() / config.run.name
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(to_ini(config))
    problem = build_problem(config)
    plan = build_plan(config)
    init_seed, data_rng, train_rng, ada_rng, _ = _streams(config.run.seed)
    segments = plan.segments(problem.t_span)
    basis0 = plan.basis(*segments[0])
    op0 = plan.operator(problem, basis0)
    net = build_net(config, problem, basis0.size)
    s = config.sampling
    data = uniform_training_set(problem, op0.n_equations, s.n_r, data_rng, s.n_ic, s.n_bc, mesh=s.mesh)
    e = config.evaluation
    X_eval, t_eval = evaluation_points(problem, e.grid, e.points, config.run.seed)
    exact = exact_values(problem, X_eval, t_eval)

    loss_path = out / "loss_history.csv"
    error_path = None
    checkpoints, per_iteration = [], []
    failed, message = False, "ok"
    error = float("nan")
    model = None
    history = []
    try:
        if config.adaptive.enabled:
            a = config.adaptive
            dcfg = DensityConfig(a.density_epochs, a.density_batch, a.pool_size, a.density_lr,
                                 a.flow_layers, a.knots, a.hidden)
            ev = lambda p: relative_l2(NetField(net, p, basis0).values(X_eval, t_eval), exact)
            result = adaptive_loop(problem, op0, net, net.init(init_seed), data, plan.train, dcfg,
                                   a.n_adaptive, a.n_new, ada_rng, ev, seed=config.run.seed, n_mc=a.n_mc,
                                   on_iteration=on_progress, strategy=a.strategy)
            history = result.history
            per_iteration = [r.error for r in result.records]
            error_path = out / "error_history.csv"
            write_records(error_path, result.records)
            for k, (Xs, ts, logd) in enumerate(result.samples):
                write_samples(out / f"samples_{k + 1}.csv", Xs, ts, logd)
            model = MarchResult([SegmentModel(segments[0], basis0, op0, net, result.params, history)])
        else:
            model = time_march(problem, plan, net, net.init(init_seed), data, train_rng,
                               on_segment=on_progress)
            history = model.history
    except TrainingDiverged as exc:
        failed, message = True, str(exc)
        history = exc.history
    write_history(loss_path, history)
    if model is not None:
        for k, seg in enumerate(model.segments):
            path = out / f"model_seg{k}.ckpt"
            save_checkpoint(path, seg.params, _checkpoint_meta(config, k, seg.t_span))
            checkpoints.append(str(path))
        pred = model.values(X_eval, t_eval)
        error = relative_l2(pred, exact)
        if e.dump:
            write_dump(out / "eval_dump.csv", X_eval, t_eval, pred, exact)
    report = RunReport(error, failed, message, time.perf_counter() - start, str(out), str(loss_path),
                       str(error_path) if error_path else None, checkpoints, to_dict(config), per_iteration)
    (out / "report.json").write_text(report.to_json())
    return report


# -- evaluate from checkpoints ---------------------------------------------------------

def load_model(checkpoint) -> tuple[ExperimentConfig, MarchResult]:
    """Rebuild the trained model from a checkpoint and its sibling segment checkpoints."""
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "model_seg0.ckpt"
    _, meta = load_checkpoint(path)
    config = parse_config(json.loads(meta["config"]))
    problem = build_problem(config)
    plan = build_plan(config)
    spans = plan.segments(problem.t_span)
    initial = problem.initial
    segments = []
    for k, span in enumerate(spans):
        params, _ = load_checkpoint(path.parent / f"model_seg{k}.ckpt")
        basis = plan.basis(*span)
        base = build_net(config, problem, basis.size)
        net = dataclasses.replace(base, constraint=base.constraint.with_initial(initial))
        if [int(w) for w in meta["widths"].split(",")] != net.widths:
            raise InvalidArgument("checkpoint widths do not match the network in its config")
        segments.append(SegmentModel(span, basis, plan.operator(problem, basis), net, params, []))
        initial = terminal_predictor(net, params, basis)
    return config, MarchResult(segments)


def evaluate(checkpoint, problem: str | None = None, grid=None, points: int | None = None,
             dump=None) -> float:
    """Relative L2 of a saved model on a grid (or test cloud); optionally dumps a CSV."""
    config, model = load_model(checkpoint)
    prob = build_problem(config)
    if problem is not None and problem != prob.name:
        raise InvalidArgument(f"checkpoint was trained on {prob.name}, not {problem}")
    grid = tuple(grid) if grid is not None else config.evaluation.grid
    X, times = evaluation_points(prob, grid, points or config.evaluation.points, config.run.seed)
    return evaluate_field(model.values, prob, X, times, dump)


# -- projection-only convergence study ---------------------------------------------------

def ode_convergence(family: str, projection: str, elements=(4, 8, 16, 32), lam: float = 1.0,
                    n_dense: int = 2001) -> tuple[np.ndarray, np.ndarray]:
    """Sup-norm errors and successive ratios for ``u' + lam u = f`` with ``u = t exp(-t)``.

    Galerkin uses the discontinuous test space one degree lower (square
    system, optimal order); collocation uses the default Gauss grid.
    """
    def exact(t):
        return t * np.exp(-t)

    def rhs(t):
        return np.exp(-t) * (1.0 - t) + lam * exact(t)

    tt = np.linspace(0.0, 1.0, n_dense)
    errors = []
    for m in elements:
        b = make_basis(family, 0.0, 1.0, m)
        if projection == "galerkin":
            system = assemble_galerkin(b, petrov_test_space(b))
        elif projection == "collocation":
            system = build_collocation(b)
        else:
            raise InvalidArgument(f"unknown projection {projection!r}")
        c = ode_solve_direct(system, lam, rhs)
        errors.append(np.max(np.abs(b.evaluate(tt) @ c - exact(tt))))
    errors = np.asarray(errors)
    return errors, errors[:-1] / errors[1:]
