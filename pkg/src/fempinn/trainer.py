"""Adam with step decay, mini-batch training of one time segment, time marching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidArgument, NumericFailure, TrainingDiverged
from .fieldnet import FieldNet, MlpParams
from .projection import assemble_galerkin, build_collocation
from .residual import (NetField, ResidualOperator, TrainingSet, build_loss, penalty_data,
                       pinned_data, residual_operator)
from .timebasis import TimeBasis, make_basis, petrov_test_space

HISTORY_EVERY = 100
HISTORY_FIELDS = ("segment", "iteration", "loss", "interior", "boundary", "initial", "learning_rate")


class OptState(NamedTuple):
    m: MlpParams
    v: MlpParams
    step: jax.Array
    lr: float = 1e-3
    decay: float = 0.9
    decay_steps: int = 1000


def adam_init(params, lr: float = 1e-3, decay: float = 0.9, decay_steps: int = 1000) -> OptState:
    if lr <= 0 or not 0 < decay <= 1 or decay_steps < 1:
        raise InvalidArgument("need lr > 0, 0 < decay <= 1 and decay_steps >= 1")
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return OptState(zeros, zeros, jnp.asarray(0), float(lr), float(decay), int(decay_steps))


def learning_rate(state: OptState, step=None):
    step = state.step if step is None else step
    return state.lr * state.decay ** jnp.floor_divide(step, state.decay_steps)


_B1, _B2, _EPS = 0.9, 0.999, 1e-8


def _adam_update(state: OptState, params, grads):
    step = state.step + 1
    lr = learning_rate(state)
    m = jax.tree_util.tree_map(lambda m, g: _B1 * m + (1 - _B1) * g, state.m, grads)
    v = jax.tree_util.tree_map(lambda v, g: _B2 * v + (1 - _B2) * g * g, state.v, grads)
    c1 = 1 - _B1 ** step
    c2 = 1 - _B2 ** step
    new = jax.tree_util.tree_map(
        lambda p, m, v: p - lr * (m / c1) / (jnp.sqrt(v / c2) + _EPS), params, m, v)
    return state._replace(m=m, v=v, step=step), new


_adam_jit = jax.jit(_adam_update)


def _all_finite(tree):
    leaves = jax.tree_util.tree_leaves(tree)
    return jnp.all(jnp.stack([jnp.all(jnp.isfinite(x)) for x in leaves]))


def adam_step(state: OptState, params, grads):
    """One Adam update; non-finite gradients raise and leave everything untouched."""
    if not bool(_all_finite(grads)):
        raise NumericFailure("non-finite gradient")
    return _adam_jit(state, params, grads)


# -- batching -------------------------------------------------------------------

def _epoch_rows(rng, n: int, n_batches: int, shuffle: bool):
    """Row indices and validity mask per mini-batch, padded to equal size."""
    n_batches = max(1, min(int(n_batches), n))
    size = math.ceil(n / n_batches)
    order = rng.permutation(n) if shuffle and n_batches > 1 else np.arange(n)
    rows = np.zeros((n_batches, size), dtype=np.int64)
    mask = np.zeros((n_batches, size), dtype=bool)
    for b, part in enumerate(np.array_split(order, n_batches)):
        rows[b, :part.size] = part
        mask[b, :part.size] = True
    return rows, mask


class _BatchStream:
    """Epoch-wise partitions without replacement, reshuffled every epoch."""

    def __init__(self, rng, n: int, n_batches: int):
        self.rng, self.n, self.n_batches = rng, n, max(1, min(int(n_batches), n))
        self._queue = []

    def take(self, count: int):
        rows, masks = [], []
        while len(rows) < count:
            if not self._queue:
                r, m = _epoch_rows(self.rng, self.n, self.n_batches, True)
                self._queue = list(zip(r, m))
            r, m = self._queue.pop(0)
            rows.append(r)
            masks.append(m)
        return np.stack(rows), np.stack(masks)


# -- single segment -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    decay: float = 0.9
    decay_steps: int = 1000
    n_r: int = 1          # interior mini-batches per epoch
    n_ic: int = 1
    n_bc: int = 1
    gamma_bc: float = 1.0
    gamma_ic: float = 1.0


@dataclass
class SegmentResult:
    params: MlpParams
    opt_state: OptState
    history: list
    final_loss: float


def _make_chunk(loss_fn):
    """Jitted scan over iterations; each iteration gathers its batch from full arrays."""

    def gather(full, rows, masks, it):
        batch = {}
        r, m = rows["r"][it], masks["r"][it]
        member = full["member"][r] * m[:, None]
        counts = jnp.sum(member, axis=0)
        batch["X"] = full["X"][r]
        for name in ("pin_value", "pin_grad", "pin_hess"):
            if name in full:
                batch[name] = full[name][r]
        batch["W"] = member * (full["lam"] / jnp.maximum(counts, 1))[None, :]
        for key, cols in (("ic", ("X", "g", "phi")), ("bc", ("X", "phi", "vals", "X2"))):
            if key not in rows:
                continue
            rr, mm = rows[key][it], masks[key][it]
            for c in cols:
                name = f"{key}_{c}"
                if name in full:
                    batch[name] = full[name][rr]
            batch[f"{key}_w"] = mm / jnp.sum(mm)
        return batch

    def chunk(params, state, full, rows, masks, ok):
        def body(carry, it):
            params, state, ok = carry
            batch = gather(full, rows, masks, it)
            (val, terms), grads = jax.value_and_grad(loss_fn, has_aux=True)(params, batch)
            finite = jnp.isfinite(val) & _all_finite(grads)
            new_state, new_params = _adam_update(state, params, grads)
            go = ok & finite
            params = jax.tree_util.tree_map(lambda a, b: jnp.where(go, a, b), new_params, params)
            state = jax.tree_util.tree_map(lambda a, b: jnp.where(go, a, b), new_state, state)
            lr = learning_rate(state, state.step - 1)
            return (params, state, go), (val, jnp.stack(terms), lr, go)

        n = rows["r"].shape[0]
        (params, state, ok), out = jax.lax.scan(body, (params, state, ok), jnp.arange(n))
        return params, state, ok, out

    return jax.jit(chunk)


def train_segment(op: ResidualOperator, net: FieldNet, params: MlpParams, data: TrainingSet,
                  config: TrainConfig, rng: np.random.Generator, opt_state: OptState | None = None,
                  segment: int = 0) -> SegmentResult:
    """Mini-batch Adam on the empirical loss of one time segment.

    Loss history rows are recorded every ``HISTORY_EVERY`` iterations and for
    the final parameters. A non-finite loss or gradient stops training and
    raises :class:`TrainingDiverged` carrying the history so far.
    """
    if op.n_equations != data.n_sets:
        raise InvalidArgument(f"{data.n_sets} interior sets for {op.n_equations} residual equations")
    if opt_state is None:
        opt_state = adam_init(params, config.lr, config.decay, config.decay_steps)
    loss_fn = build_loss(op, net, config.gamma_bc, config.gamma_ic)
    X, member = data.union()
    full = {"X": X, "member": member.astype(float), "lam": data.weights}
    full.update(pinned_data(net, X, op.order))
    pen = penalty_data(op, data)
    full.update(pen)
    streams = {"r": _BatchStream(rng, X.shape[0], config.n_r)}
    if "ic_X" in pen:
        streams["ic"] = _BatchStream(rng, len(pen["ic_X"]), config.n_ic)
    if "bc_X" in pen:
        streams["bc"] = _BatchStream(rng, len(pen["bc_X"]), config.n_bc)
    full.pop("ic_w", None)
    full.pop("bc_w", None)
    full = {k: jnp.asarray(v) for k, v in full.items()}
    chunk = _make_chunk(loss_fn)

    history = []
    ok = jnp.asarray(True)
    done = 0
    while done < config.iterations:
        count = min(HISTORY_EVERY, config.iterations - done)
        rows, masks = {}, {}
        for key, s in streams.items():
            rows[key], masks[key] = s.take(count)
        params_new, state_new, ok, (vals, terms, lrs, goes) = chunk(
            params, opt_state, full, rows, masks, ok)
        vals, terms, goes = np.asarray(vals), np.asarray(terms), np.asarray(goes)
        history.append(_row(segment, done, vals[0], terms[0], float(lrs[0])))
        if not goes.all():
            bad = int(np.argmin(goes))
            # the parameters were frozen at the last finite iterate
            raise TrainingDiverged(f"loss or gradient became non-finite at iteration {done + bad}",
                                   history=history, params=params_new)
        params, opt_state = params_new, state_new
        done += count

    full_batch = dict(pen)
    full_batch.update({"X": X, "W": data.loss_weights(member)})
    full_batch.update(pinned_data(net, X, op.order))
    total, terms = jax.jit(loss_fn)(params, {k: jnp.asarray(v) for k, v in full_batch.items()})
    if not np.isfinite(float(total)):
        raise TrainingDiverged("final loss is not finite", history=history, params=params)
    history.append(_row(segment, done, total, terms, float(learning_rate(opt_state))))
    return SegmentResult(params, opt_state, history, float(total))


def _row(segment, iteration, total, terms, lr):
    return {"segment": segment, "iteration": int(iteration), "loss": float(total),
            "interior": float(terms[0]), "boundary": float(terms[1]), "initial": float(terms[2]),
            "learning_rate": float(lr)}


def write_history(path, rows, fields=HISTORY_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# -- time marching ----------------------------------------------------------------

@dataclass(frozen=True)
class MarchPlan:
    n_segments: int = 1
    family: str = "lagrange-p2"
    n_elements: int = 8
    projection: str = "galerkin"     # galerkin | collocation
    test_space: str = "bubnov"       # bubnov | petrov (Galerkin only)
    K: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.n_segments < 1:
            raise InvalidArgument("n_segments must be at least 1")
        if self.projection not in ("galerkin", "collocation"):
            raise InvalidArgument(f"unknown projection {self.projection!r}")
        if self.test_space not in ("bubnov", "petrov"):
            raise InvalidArgument(f"unknown test space {self.test_space!r}")

    def segments(self, t_span) -> list[tuple[float, float]]:
        t0, t1 = float(t_span[0]), float(t_span[1])
        edges = np.linspace(t0, t1, self.n_segments + 1)
        edges[-1] = t1
        return list(zip(edges[:-1], edges[1:]))

    def basis(self, t_start: float, t_end: float) -> TimeBasis:
        return make_basis(self.family, t_start, t_end, self.n_elements)

    def operator(self, problem, basis: TimeBasis) -> ResidualOperator:
        if self.projection == "galerkin":
            test = petrov_test_space(basis) if self.test_space == "petrov" else None
            system = assemble_galerkin(basis, test, nonlinearity_degree=problem.nonlinearity_degree)
        else:
            system = build_collocation(basis, self.K)
        return residual_operator(problem, system)


def terminal_predictor(net: FieldNet, params: MlpParams, basis: TimeBasis) -> Callable:
    """``x -> u_N(x, t_end)`` for one segment, as a traceable single-point function.

    Coefficients pinned to the initial data have ``phi_i(t_end) = 0`` and are
    skipped, so chained segments never nest earlier networks.
    """
    phi = np.asarray(basis.terminal_values())
    pinned = set(net.constraint.pinned)
    if any(abs(phi[i]) > 0 for i in pinned):
        raise InvalidArgument("a pinned coefficient contributes at the terminal time")
    keep = np.array([i for i in range(phi.size) if i not in pinned and phi[i] != 0.0])
    weights = jnp.asarray(phi[keep])

    def g(x):
        return net.omega_free(params, x)[keep] @ weights

    return g


@dataclass
class SegmentModel:
    t_span: tuple
    basis: TimeBasis
    op: ResidualOperator
    net: FieldNet
    params: MlpParams
    history: list

    @property
    def field(self) -> NetField:
        return NetField(self.net, self.params, self.basis)


@dataclass
class MarchResult:
    segments: list

    @property
    def history(self) -> list:
        return [row for s in self.segments for row in s.history]

    def segment_index(self, t) -> np.ndarray:
        """Segment owning each time; interior segment ends belong to the earlier segment."""
        ends = np.array([s.t_span[1] for s in self.segments[:-1]])
        return np.searchsorted(ends, np.asarray(t, dtype=float), side="left")

    def values(self, X, t) -> np.ndarray:
        """``u_N`` on the tensor grid ``X x t``, shape ``(n, T)``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((np.shape(X)[0], t.size))
        idx = self.segment_index(t)
        for k, seg in enumerate(self.segments):
            sel = idx == k
            if np.any(sel):
                out[:, sel] = seg.field.values(X, t[sel])
        return out


def time_march(problem, plan: MarchPlan, net: FieldNet, params: MlpParams, data: TrainingSet,
               rng: np.random.Generator, on_segment: Callable | None = None) -> MarchResult:
    """Train segment after segment, passing terminal predictions on as initial data.

    Parameters are warm-started from the previous segment; each segment gets
    a fresh optimizer. ``net.constraint.initial`` is replaced by the problem's
    ``g`` on the first segment and by the previous terminal predictor after.
    """
    initial = problem.initial
    segments = []
    for k, (a, b) in enumerate(plan.segments(problem.t_span)):
        basis = plan.basis(a, b)
        op = plan.operator(problem, basis)
        seg_net = replace(net, constraint=net.constraint.with_initial(initial))
        seg_data = data
        if data.ic_points is not None:
            seg_data = data.with_initial_values(jax.vmap(initial)(jnp.asarray(data.ic_points)))
        result = train_segment(op, seg_net, params, seg_data, plan.train, rng, segment=k)
        params = result.params
        segments.append(SegmentModel((a, b), basis, op, seg_net, params, result.history))
        if on_segment is not None:
            on_segment(k, segments[-1])
        initial = terminal_predictor(seg_net, params, basis)
    return MarchResult(segments)
