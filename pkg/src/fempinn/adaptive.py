"""Residual-driven refinement of the training set.

One adaptivity iteration trains the PDE model, fits the joint density
``p(x, t)`` to the squared continuous residual by importance-sampled cross
entropy, turns it into a discrete distribution over the residual equations
and appends new points drawn from it.
"""

from __future__ import annotations

import csv
import functools
import warnings
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .density import JointDensity, JointParams, TemporalSplineDensity
from .errors import InvalidArgument
from .fieldnet import FieldNet
from .residual import NetField, ResidualOperator, TrainingSet, interp_residual
from .timebasis import gauss_rule
from .trainer import TrainConfig, _adam_update, adam_init, train_segment

_UNDERFLOW = -700.0


@dataclass(frozen=True)
class DiscreteTemporalDistribution:
    support: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.masses.shape:
            raise InvalidArgument("one mass per support point")
        if np.any(self.masses < 0) or abs(self.masses.sum() - 1.0) > 1e-12:
            raise InvalidArgument("masses must be non-negative and sum to one")


def _normalized(masses, what: str) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    total = masses.sum()
    if not np.isfinite(total) or total <= 0:
        warnings.warn(f"{what}: all masses vanish, falling back to uniform", RuntimeWarning)
        return np.full(masses.size, 1.0 / masses.size)
    p = masses / total
    return p / p.sum()


def temporal_discrete_galerkin(residual_fn, support, sample_sets) -> DiscreteTemporalDistribution:
    """``p_i`` proportional to the Monte Carlo estimate of ``int r_i^2 dx``.

    ``residual_fn(X)`` returns the ``(n, N+1)`` residual matrix; ``sample_sets``
    is one array of points shared by all equations or a list with one array each.
    """
    support = np.asarray(support, dtype=float)
    if isinstance(sample_sets, (list, tuple)):
        est = np.array([np.mean(np.asarray(residual_fn(X))[:, i] ** 2) for i, X in enumerate(sample_sets)])
    else:
        est = np.mean(np.asarray(residual_fn(sample_sets)) ** 2, axis=0)
    return DiscreteTemporalDistribution(support, _normalized(est, "galerkin distribution"))


def temporal_discrete_collocation(density: TemporalSplineDensity, times) -> DiscreteTemporalDistribution:
    """Cdf mass of the cell around each ``s_i`` bounded by midpoints (end cells reach 0 and 1)."""
    s = np.asarray(times, dtype=float)
    if np.any(np.diff(s) <= 0):
        raise InvalidArgument("grid times must be strictly increasing")
    edges = np.concatenate([[0.0], 0.5 * (s[:-1] + s[1:]), [1.0]])
    F = density.cdf(edges)
    F[0], F[-1] = 0.0, 1.0
    masses = np.maximum(np.diff(F), 0.0)
    return DiscreteTemporalDistribution(s, masses / masses.sum())


def allocate(counts_total: int, p) -> np.ndarray:
    """Largest-remainder split of ``counts_total`` proportional to ``p``."""
    p = np.asarray(p, dtype=float)
    raw = counts_total * p
    base = np.floor(raw).astype(int)
    rest = counts_total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rest]] += 1
    return base


# -- cross entropy ------------------------------------------------------------------

def cross_entropy(model: JointDensity, params: JointParams, X, t, weights):
    """``-mean(w_i log p(x_i, t_i))`` with importance weights ``w``."""
    return -jnp.mean(weights * model.logpdf(params, X, t))


@functools.lru_cache(maxsize=16)
def _ce_step(model: JointDensity):
    def step(params, state, X, t, w):
        loss, grads = jax.value_and_grad(lambda p: cross_entropy(model, p, X, t, w))(params)
        state, params = _adam_update(state, params, grads)
        return params, state, loss
    return jax.jit(step)


def cross_entropy_step(model: JointDensity, params: JointParams, opt_state, X, t, weights):
    """One Adam step on the importance-sampled cross entropy; returns ``(params, state, loss)``."""
    return _ce_step(model)(params, opt_state, jnp.asarray(X), jnp.asarray(t), jnp.asarray(weights))


def importance_weights(r2, log_frozen) -> tuple[np.ndarray, int]:
    """``r^2 / p_frozen`` scaled to unit mean; samples whose frozen density underflows are dropped."""
    r2 = np.asarray(r2, dtype=float)
    log_frozen = np.asarray(log_frozen, dtype=float)
    bad = ~np.isfinite(log_frozen) | (log_frozen < _UNDERFLOW) | ~np.isfinite(r2)
    w = np.zeros_like(r2)
    w[~bad] = r2[~bad] * np.exp(-log_frozen[~bad])
    mean = w.mean()
    if mean > 0:
        w /= mean
    return w, int(bad.sum())


@dataclass(frozen=True)
class DensityConfig:
    epochs: int = 500
    batch_size: int = 1000
    pool_size: int = 5000
    lr: float = 1e-3
    n_layers: int = 8
    knots: int = 32
    hidden: int = 32


def draw_from(model: JointDensity, params: JointParams | None, count: int, rng, problem):
    """``count`` space-time points from the model (uniform when ``params`` is None), inside the domain."""
    xs, ts = [], []
    need = count
    for _ in range(1000):
        if need <= 0:
            break
        if params is None:
            t = rng.uniform(*model.t_span, size=need)
            lo, hi = np.asarray(model.lower), np.asarray(model.upper)
            X = lo + (hi - lo) * rng.uniform(size=(need, len(lo)))
        else:
            X, t = model.sample(params, need, rng)
        keep = problem.contains(X)
        xs.append(X[keep])
        ts.append(t[keep])
        need -= int(keep.sum())
    X, t = np.concatenate(xs)[:count], np.concatenate(ts)[:count]
    if len(t) < count:
        raise InvalidArgument("could not draw enough samples inside the domain")
    return X, t


def train_density(model: JointDensity, params: JointParams, frozen: JointParams | None, residual2,
                  problem, config: DensityConfig, rng, opt_state=None):
    """Fit ``p(x, t)`` to the residual-induced distribution.

    A pool is drawn from the frozen model (uniform on the first pass) and
    reweighted by ``r^2 / p_frozen``; Adam then runs over random mini-batches
    of the pool. Returns ``(params, opt_state, losses, dropped)``.
    """
    X, t = draw_from(model, frozen, config.pool_size, rng, problem)
    if frozen is None:
        log_frozen = np.full(len(t), -model.log_volume())
    else:
        log_frozen = np.asarray(jax.jit(model.logpdf)(frozen, jnp.asarray(X), jnp.asarray(t)))
    w, dropped = importance_weights(residual2(X, t), log_frozen)
    if dropped:
        warnings.warn(f"{dropped} samples dropped: frozen density underflow", RuntimeWarning)
    if opt_state is None:
        opt_state = adam_init(params, config.lr, 0.9, 1000)
    losses = []
    bs = min(config.batch_size, len(t))
    for _ in range(config.epochs):
        idx = rng.choice(len(t), size=bs, replace=False)
        params, opt_state, loss = cross_entropy_step(model, params, opt_state, X[idx], t[idx], w[idx])
        losses.append(float(loss))
    return params, opt_state, losses, dropped


# -- refinement ------------------------------------------------------------------------

def equation_times(op: ResidualOperator) -> np.ndarray:
    """The time ``s_i`` attached to each residual equation."""
    if op.kind == "collocation":
        return np.asarray(op.system.times)
    return np.asarray(op.system.test.anchor_times())


def support_times(op: ResidualOperator, i: int, K: int = 2) -> np.ndarray:
    """Gauss points (``K`` per element) on the support of test function ``i``."""
    test = op.system.test
    nodes = test.partition.t_nodes
    rule = gauss_rule(K)
    elems = np.asarray(test.support_elements(i))
    h = nodes[elems + 1] - nodes[elems]
    return (nodes[elems][:, None] + h[:, None] * rule.nodes[None, :]).ravel()


def discrete_distribution(op: ResidualOperator, model: JointDensity, params: JointParams,
                          field: NetField, X_mc) -> DiscreteTemporalDistribution:
    if op.kind == "collocation":
        s = (equation_times(op) - model.t_span[0]) / (model.t_span[1] - model.t_span[0])
        dist = temporal_discrete_collocation(model.temporal(params), s)
        return DiscreteTemporalDistribution(equation_times(op), dist.masses)
    return temporal_discrete_galerkin(lambda X: op.residual(field, X), equation_times(op), X_mc)


def refine_training_set(data: TrainingSet, model: JointDensity, params: JointParams, n_new: int,
                        op: ResidualOperator, p_dis: DiscreteTemporalDistribution, rng, problem,
                        weight_floor: float = 1e-12):
    """Append ``n_new`` points in total and set ``lambda_i = p_dis(s_i)``.

    Collocation: equation indices are drawn from ``p_dis``, then ``x | s_i``.
    Galerkin: counts proportional to ``p_dis`` (largest remainder), points drawn
    conditioned on Gauss times in the support of each test function.
    Returns the new set and the new points with their times.
    """
    n_eq = data.n_sets
    new_points = [np.zeros((0, data.dim)) for _ in range(n_eq)]
    new_times = [np.zeros(0) for _ in range(n_eq)]
    if n_new > 0:
        if op.kind == "collocation":
            idx = rng.choice(n_eq, size=n_new, p=p_dis.masses)
            counts = np.bincount(idx, minlength=n_eq)
            times_for = lambda i, c: np.full(c, p_dis.support[i])
        else:
            counts = allocate(n_new, p_dis.masses)
            times_for = lambda i, c: np.resize(support_times(op, i), c)
        for i in range(n_eq):
            c = int(counts[i])
            if c == 0:
                continue
            t = times_for(i, c)
            new_points[i] = _space_draw(model, params, t, rng, problem)
            new_times[i] = t
    lam = np.maximum(p_dis.masses, weight_floor)
    refined = data.appended(new_points).with_weights(lam / lam.sum())
    return refined, new_points, new_times


def refine_uniform(data: TrainingSet, n_new: int, op: ResidualOperator, rng, problem):
    """Append ``n_new`` uniform points with uniformly drawn equation indices; weights unchanged."""
    n_eq = data.n_sets
    idx = rng.integers(n_eq, size=n_new)
    X = problem.sample_interior(rng, n_new)
    times = equation_times(op)
    new_points = [X[idx == i] for i in range(n_eq)]
    new_times = [np.full(len(p), times[i]) for i, p in enumerate(new_points)]
    return data.appended(new_points), new_points, new_times


def _space_draw(model, params, t, rng, problem):
    out = np.zeros((t.size, problem.dim))
    todo = np.arange(t.size)
    for _ in range(1000):
        if todo.size == 0:
            return out
        X = model.sample_space(params, t[todo], rng)
        ok = problem.contains(X)
        out[todo[ok]] = X[ok]
        todo = todo[~ok]
    raise InvalidArgument("could not draw enough samples inside the domain")


# -- outer loop ----------------------------------------------------------------------

@dataclass
class AdaptiveRecord:
    iteration: int
    error: float
    set_sizes: np.ndarray
    masses: np.ndarray
    weights: np.ndarray
    final_loss: float


@dataclass
class AdaptiveResult:
    params: object
    records: list
    history: list
    samples: list     # per refinement: (X, t, logdensity)
    data: TrainingSet


def adaptive_loop(problem, op: ResidualOperator, net: FieldNet, params, data: TrainingSet,
                  train: TrainConfig, density: DensityConfig, n_adaptive: int, n_new: int, rng,
                  evaluate, seed: int = 0, n_mc: int = 2000, on_iteration=None,
                  strategy: str = "adaptive") -> AdaptiveResult:
    """Alternate PDE training, density fitting and refinement ``n_adaptive`` times.

    ``evaluate(params)`` returns the relative error recorded after every PDE
    solve. The optimizer state carries over between iterations. Density
    fitting and refinement after the last solve would not affect the result
    and are skipped. ``strategy="uniform"`` is the matched-budget baseline:
    the same number of new points, drawn uniformly, with weights unchanged.
    """
    if n_adaptive < 1:
        raise InvalidArgument("n_adaptive must be at least 1")
    if strategy not in ("adaptive", "uniform"):
        raise InvalidArgument(f"unknown refinement strategy {strategy!r}")
    span = (op.basis.partition.t_start, op.basis.partition.t_end)
    model = JointDensity.for_problem(problem, span, density.n_layers, density.knots, density.hidden)
    dparams = model.init(seed)
    frozen = None
    d_state = None
    opt_state = None
    records, history, samples = [], [], []
    for k in range(n_adaptive):
        result = train_segment(op, net, params, data, train, rng, opt_state=opt_state, segment=k)
        params, opt_state = result.params, result.opt_state
        for row in result.history:
            history.append(dict(row, adaptive_iteration=k))
        error = float(evaluate(params))
        field = NetField(net, params, op.basis)
        last = k == n_adaptive - 1
        masses = np.full(data.n_sets, np.nan)
        sizes, weights = data.set_sizes(), data.weights.copy()
        if not last and strategy == "uniform":
            data, pts, tms = refine_uniform(data, n_new, op, rng, problem)
            samples.append((np.concatenate(pts), np.concatenate(tms), np.full(n_new, -model.log_volume())))
        elif not last:
            residual2 = lambda X, t: np.asarray(interp_residual(problem, field, X, t)) ** 2
            dparams, d_state, _, _ = train_density(model, dparams, frozen, residual2, problem, density, rng, d_state)
            X_mc = problem.sample_interior(rng, n_mc)
            p_dis = discrete_distribution(op, model, dparams, field, X_mc)
            masses = p_dis.masses
            data, pts, tms = refine_training_set(data, model, dparams, n_new, op, p_dis, rng, problem)
            Xs = np.concatenate(pts)
            ts = np.concatenate(tms)
            logd = np.asarray(jax.jit(model.logpdf)(dparams, jnp.asarray(Xs), jnp.asarray(ts))) if len(ts) else ts
            samples.append((Xs, ts, logd))
            frozen = dparams
        record = AdaptiveRecord(k, error, sizes, masses, weights, result.final_loss)
        records.append(record)
        if on_iteration is not None:
            on_iteration(record)
    return AdaptiveResult(params, records, history, samples, data)


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if not records:
            return
        n = len(records[0].weights)
        w.writerow(["iteration", "relative_l2", "final_loss", "total_points"]
                   + [f"size_{i}" for i in range(n)] + [f"p_{i}" for i in range(n)]
                   + [f"lambda_{i}" for i in range(n)])
        for r in records:
            w.writerow([r.iteration, repr(r.error), repr(r.final_loss), int(r.set_sizes.sum())]
                       + [int(v) for v in r.set_sizes] + [repr(float(v)) for v in r.masses]
                       + [repr(float(v)) for v in r.weights])


def write_samples(path, X, t, logd) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["t", "logdensity"])
        for x, tt, ld in zip(X, t, logd):
            w.writerow([repr(float(v)) for v in x] + [repr(float(tt)), repr(float(ld))])
