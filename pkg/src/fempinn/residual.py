"""Galerkin and collocation residuals, the empirical loss and training sets.

A *field* supplies time slices of a space-time function: :class:`NetField`
wraps a coefficient network and its time basis (``u = sum_i omega_i phi_i``),
:class:`ExactField` wraps a closed-form solution differentiated by autodiff.
Both go through the same residual code, which is what the oracle tests rely on.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DegenerateMetric, InvalidArgument
from .fieldnet import FieldNet, SpatialJet
from .problems import PdeProblem, exact_jet
from .projection import CollocationGrid, GalerkinSystem
from .timebasis import TimeBasis


# -- fields --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NetField:
    net: FieldNet
    params: object
    basis: TimeBasis

    def jet(self, X, order: int = 2) -> SpatialJet:
        return _jet_fn(self.net, order)(self.params, jnp.asarray(X, dtype=float))

    def slices(self, X, times, order: int = 2):
        times = np.asarray(times, dtype=float)
        return slices_from_jet(self.jet(X, order), self.basis.evaluate(times, 0),
                               self.basis.evaluate(times, 1))

    def paired(self, X, t, order: int = 2):
        t = np.asarray(t, dtype=float)
        return paired_from_jet(self.jet(X, order), self.basis.evaluate(t, 0),
                               self.basis.evaluate(t, 1))

    def values(self, X, t):
        """``u_N`` on the tensor grid ``X x t``, shape ``(n, T)``."""
        omega = _jet_fn(self.net, 0)(self.params, jnp.asarray(X, dtype=float)).value
        return np.asarray(omega) @ self.basis.evaluate(np.asarray(t, dtype=float), 0).T


@dataclass(frozen=True, eq=False)
class ExactField:
    fn: object

    def slices(self, X, times, order: int = 2):
        return exact_jet(self.fn, X, times, order)

    def paired(self, X, t, order: int = 2):
        X = jnp.asarray(X, dtype=float)
        t = jnp.asarray(t, dtype=float)
        one = jax.vmap(lambda x, s: tuple(a[0, 0] for a in exact_jet(self.fn, x[None], s[None], order)))
        return one(X, t)

    def values(self, X, t):
        X = np.asarray(X, dtype=float)
        t = np.asarray(t, dtype=float)
        return np.asarray(self.fn(X[:, None, :], t[None, :]))


@functools.lru_cache(maxsize=64)
def _jet_fn(net: FieldNet, order: int):
    return jax.jit(lambda params, X: net.jet(params, X, order))


def slices_from_jet(jet: SpatialJet, Phi, D):
    """Time slices ``(U, U_t, U_x, U_xx)`` on ``n`` points x ``T`` times from a coefficient jet."""
    U = jet.value @ Phi.T
    Ut = jet.value @ D.T
    Ux = None if jet.grad is None else jnp.einsum("nid,ti->ntd", jet.grad, Phi)
    Uxx = None if jet.hess_diag is None else jnp.einsum("nid,ti->ntd", jet.hess_diag, Phi)
    return U, Ut, Ux, Uxx


def paired_from_jet(jet: SpatialJet, phi, dphi):
    """Same as :func:`slices_from_jet` but point ``k`` is paired with time ``k``."""
    U = jnp.sum(jet.value * phi, axis=-1)
    Ut = jnp.sum(jet.value * dphi, axis=-1)
    Ux = None if jet.grad is None else jnp.einsum("nid,ni->nd", jet.grad, phi)
    Uxx = None if jet.hess_diag is None else jnp.einsum("nid,ni->nd", jet.hess_diag, phi)
    return U, Ut, Ux, Uxx


def _zeros_like_grad(U, d):
    return jnp.zeros(jnp.shape(U) + (d,))


def pointwise(problem: PdeProblem, U, Ut, Ux, Uxx, x, t):
    """``u_t + N[u] - f`` with the broadcasting rules of the problem callables."""
    if Ux is None:
        Ux = _zeros_like_grad(U, problem.dim)
    if Uxx is None:
        Uxx = _zeros_like_grad(U, problem.dim)
    return Ut + problem.operator(U, Ux, Uxx, x, t) - problem.source(x, t)


# -- residual operators -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResidualOperator:
    """Precomputed time matrices turning spatial jets into residual vectors.

    ``kind`` is ``"galerkin"`` (one residual per test function) or
    ``"collocation"`` (one per grid time).
    """

    problem: PdeProblem
    kind: str
    system: object
    times: np.ndarray     # times at which the pointwise residual is sampled
    Phi: np.ndarray       # (T, N+1)
    D: np.ndarray         # (T, N+1)
    P: np.ndarray | None  # (T, n_eq) Galerkin projector
    fast: bool = False

    @property
    def basis(self) -> TimeBasis:
        return self.system.trial if self.kind == "galerkin" else self.system.basis

    @property
    def n_equations(self) -> int:
        return self.system.n_equations

    @property
    def order(self) -> int:
        return self.problem.derivative_order

    def from_jet(self, jet: SpatialJet, X):
        """Residual matrix ``(n, n_eq)`` for the coefficient jet of a batch ``X``."""
        X = jnp.asarray(X)
        if self.fast:
            A, B = jnp.asarray(self.system.A), jnp.asarray(self.system.B)
            x = X[:, None, :]
            lin = self.problem.operator(jet.value, jet.grad, _hess_or_zero(jet, self.problem.dim), x, 0.0)
            F = self.problem.source(x, jnp.asarray(self.times)[None, :]) @ jnp.asarray(self.P)
            return jet.value @ A.T + lin @ B.T - F
        U, Ut, Ux, Uxx = slices_from_jet(jet, jnp.asarray(self.Phi), jnp.asarray(self.D))
        return self.from_slices(U, Ut, Ux, Uxx, X)

    def from_slices(self, U, Ut, Ux, Uxx, X):
        X = jnp.asarray(X)
        R = pointwise(self.problem, U, Ut, Ux, Uxx, X[:, None, :], jnp.asarray(self.times)[None, :])
        if self.kind == "galerkin":
            return R @ jnp.asarray(self.P)
        return R

    def residual(self, field, X):
        X = jnp.asarray(X, dtype=float)
        if isinstance(field, NetField):
            if not field.basis.partition.same_as(self.basis.partition) or field.basis.family != self.basis.family:
                raise InvalidArgument("field basis does not match the residual's time basis")
            return self.from_jet(field.jet(X, self.order), X)
        return self.from_slices(*field.slices(X, self.times, self.order), X)


def _hess_or_zero(jet, d):
    if jet.hess_diag is not None:
        return jet.hess_diag
    return jnp.zeros(jet.value.shape + (d,))


def residual_operator(problem: PdeProblem, system, fast: bool | None = None) -> ResidualOperator:
    if isinstance(system, GalerkinSystem):
        if fast is None:
            fast = problem.linear
        if fast and not problem.linear:
            raise InvalidArgument("the fast Galerkin path needs a linear time-independent operator")
        return ResidualOperator(problem, "galerkin", system, system.times, system.trial_values,
                                system.trial_derivs, system.projector, bool(fast))
    if isinstance(system, CollocationGrid):
        return ResidualOperator(problem, "collocation", system, system.times, system.Phi,
                                system.D, None, False)
    raise InvalidArgument(f"unsupported projection {type(system).__name__}")


def galerkin_residual(problem: PdeProblem, system: GalerkinSystem, field, X, fast: bool | None = None):
    """``r^g_j(x) = (u_t + N[u] - f, psi_j)`` for each point of ``X``; shape ``(n, n_test)``."""
    return residual_operator(problem, system, fast).residual(field, X)


def collocation_residual(problem: PdeProblem, grid: CollocationGrid, field, X):
    """``r^c_j(x) = u_t + N[u] - f`` at every grid time ``s_j``; shape ``(n, |S_t|)``."""
    return residual_operator(problem, grid).residual(field, X)


def interp_residual(problem: PdeProblem, field, X, s):
    """Continuous residual of the field at paired points ``(X[k], s[k])``."""
    X = jnp.atleast_2d(jnp.asarray(X, dtype=float))
    s = np.broadcast_to(np.asarray(s, dtype=float), X.shape[:1])
    U, Ut, Ux, Uxx = field.paired(X, s, problem.derivative_order)
    return pointwise(problem, U, Ut, Ux, Uxx, X, jnp.asarray(s))


def relative_l2(pred, exact) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    exact = np.asarray(exact, dtype=float).ravel()
    if pred.shape != exact.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {exact.shape}")
    denom = np.sqrt(np.sum(exact ** 2))
    if denom == 0.0:
        raise DegenerateMetric("exact values are identically zero")
    return float(np.sqrt(np.sum((pred - exact) ** 2)) / denom)


# -- training sets -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Interior sets ``S_{r,j}`` (shared ``base`` points plus per-set ``extra``), IC and BC data.

    Every interior set contains the shared base points; adaptive refinement
    appends points to individual sets through ``extra``.
    """

    base: np.ndarray
    extra: tuple
    weights: np.ndarray
    ic_points: np.ndarray | None = None
    ic_values: np.ndarray | None = None
    bc_points: np.ndarray | None = None
    bc_times: np.ndarray | None = None
    bc_mirror: np.ndarray | None = None   # partner points for periodic penalties
    bc_values: np.ndarray | None = None

    def __post_init__(self):
        if len(self.extra) != self.weights.size:
            raise InvalidArgument("one weight per interior set is required")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidArgument("weights must be positive and sum to one")

    @property
    def n_sets(self) -> int:
        return len(self.extra)

    @property
    def dim(self) -> int:
        return self.base.shape[1]

    def set_sizes(self) -> np.ndarray:
        return np.array([self.base.shape[0] + e.shape[0] for e in self.extra])

    def interior(self, j: int) -> np.ndarray:
        return np.concatenate([self.base, self.extra[j]], axis=0)

    def union(self):
        """All interior points with the boolean membership matrix ``(n_points, n_sets)``."""
        parts = [self.base] + list(self.extra)
        X = np.concatenate(parts, axis=0)
        member = np.zeros((X.shape[0], self.n_sets), dtype=bool)
        member[: self.base.shape[0]] = True
        pos = self.base.shape[0]
        for j, e in enumerate(self.extra):
            member[pos:pos + e.shape[0], j] = True
            pos += e.shape[0]
        return X, member

    def loss_weights(self, member=None) -> np.ndarray:
        """``W[p, j] = lambda_j / |S_{r,j}|`` for members, so that ``sum(W * R^2)`` is the interior loss."""
        if member is None:
            _, member = self.union()
        counts = member.sum(axis=0)
        if np.any(counts == 0):
            raise InvalidArgument("empty interior set")
        return member * (self.weights / counts)[None, :]

    def appended(self, new_points) -> "TrainingSet":
        """New set with ``new_points[j]`` appended to ``S_{r,j}``."""
        extra = tuple(np.concatenate([e, np.asarray(p, dtype=float).reshape(-1, self.dim)], axis=0)
                      for e, p in zip(self.extra, new_points))
        return replace(self, extra=extra)

    def with_weights(self, weights) -> "TrainingSet":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def with_initial_values(self, values) -> "TrainingSet":
        return replace(self, ic_values=np.asarray(values, dtype=float))


def uniform_training_set(problem: PdeProblem, n_sets: int, n_r: int, rng: np.random.Generator,
                         n_ic: int = 0, n_bc: int = 0, mesh: bool = False) -> TrainingSet:
    """Uniform interior points shared by all sets, plus optional IC/BC data."""
    if n_r < 1:
        raise InvalidArgument("at least one interior point is required")
    base = problem.uniform_mesh(n_r) if mesh else problem.sample_interior(rng, n_r)
    ic_points = ic_values = None
    if n_ic > 0:
        ic_points = problem.uniform_mesh(n_ic) if mesh else problem.sample_interior(rng, n_ic)
        ic_values = np.asarray(jax.vmap(problem.initial)(jnp.asarray(ic_points)))
    bc_points = bc_times = bc_mirror = bc_values = None
    if n_bc > 0:
        if problem.boundary == "periodic":
            lo, hi = np.asarray(problem.lower), np.asarray(problem.upper)
            bc_times = rng.uniform(problem.t_start, problem.t_end, size=n_bc)
            bc_points = np.repeat(lo[None], n_bc, axis=0)
            bc_mirror = np.repeat(hi[None], n_bc, axis=0)
        else:
            bc_points, bc_times = problem.sample_boundary(rng, n_bc)
            bc_values = np.asarray(problem.boundary_values(jnp.asarray(bc_points), jnp.asarray(bc_times)))
    return TrainingSet(base, tuple(np.zeros((0, problem.dim)) for _ in range(n_sets)),
                       np.full(n_sets, 1.0 / n_sets), ic_points, ic_values, bc_points, bc_times,
                       bc_mirror, bc_values)


# -- loss -------------------------------------------------------------------------

def penalty_flags(problem: PdeProblem, net: FieldNet) -> tuple[bool, bool]:
    """Which soft penalties are active: ``(boundary, initial)``."""
    c = net.constraint
    if problem.boundary == "periodic":
        bc = c.boundary != "periodic-fourier"
    else:
        bc = c.boundary not in ("dirichlet-ball", "dirichlet-box")
    ic = 0 not in c.pinned
    return bc, ic


def make_batch(op: ResidualOperator, data: TrainingSet, rows=None, member=None, X=None) -> dict:
    """Arrays consumed by the loss: interior points and weights, IC and BC data."""
    if X is None or member is None:
        X, member = data.union()
    if rows is not None:
        X, member = X[rows], member[rows]
    counts = member.sum(axis=0)
    W = np.where(member, data.weights[None, :] / np.maximum(counts, 1)[None, :], 0.0)
    batch = {"X": X, "W": W}
    basis = op.basis
    batch.update(penalty_data(op, data))
    return batch


def penalty_data(op: ResidualOperator, data: TrainingSet) -> dict:
    """IC/BC arrays for the segment covered by ``op``; ``*_w`` are averaging weights."""
    out = {}
    basis = op.basis
    if data.ic_points is not None and data.ic_values is not None:
        n = len(data.ic_points)
        out["ic_X"] = data.ic_points
        out["ic_g"] = data.ic_values
        out["ic_phi"] = np.repeat(basis.evaluate(basis.partition.t_start)[None], n, 0)
        out["ic_w"] = np.full(n, 1.0 / n)
    if data.bc_points is not None:
        inside = (data.bc_times >= basis.partition.t_start) & (data.bc_times <= basis.partition.t_end)
        n = int(inside.sum())
        if n:
            out["bc_X"] = data.bc_points[inside]
            out["bc_phi"] = basis.evaluate(data.bc_times[inside])
            out["bc_w"] = np.full(n, 1.0 / n)
            if data.bc_mirror is not None:
                out["bc_X2"] = data.bc_mirror[inside]
            else:
                out["bc_vals"] = data.bc_values[inside]
    return out


def pinned_data(net: FieldNet, X, order: int) -> dict:
    """Jet of the pinned initial data at ``X``; it does not depend on the parameters."""
    if not net.constraint.pinned:
        return {}
    jet = net.initial_jet(jnp.asarray(X), order)
    out = {"pin_value": jet.value}
    if jet.grad is not None:
        out["pin_grad"] = jet.grad
    if jet.hess_diag is not None:
        out["pin_hess"] = jet.hess_diag
    return out


def build_loss(op: ResidualOperator, net: FieldNet, gamma_bc: float = 1.0, gamma_ic: float = 1.0):
    """Pure loss ``(params, batch) -> (total, (interior, boundary, initial))``."""
    use_bc, use_ic = penalty_flags(op.problem, net)
    order = op.order

    def loss(params, batch):
        X = batch["X"]
        pinned = None
        if "pin_value" in batch:
            pinned = SpatialJet(batch["pin_value"], batch.get("pin_grad"), batch.get("pin_hess"))
        R = op.from_jet(net.jet(params, X, order, pinned), X)
        interior = jnp.sum(batch["W"] * R ** 2)
        bc = jnp.zeros(())
        ic = jnp.zeros(())
        if use_bc and "bc_X" in batch:
            ub = jnp.sum(net.values(params, batch["bc_X"]) * batch["bc_phi"], axis=-1)
            if "bc_X2" in batch:
                target = jnp.sum(net.values(params, batch["bc_X2"]) * batch["bc_phi"], axis=-1)
            else:
                target = batch["bc_vals"]
            bc = jnp.sum(batch["bc_w"] * (ub - target) ** 2)
        if use_ic and "ic_X" in batch:
            u0 = jnp.sum(net.values(params, batch["ic_X"]) * batch["ic_phi"], axis=-1)
            ic = jnp.sum(batch["ic_w"] * (u0 - batch["ic_g"]) ** 2)
        return interior + gamma_bc * bc + gamma_ic * ic, (interior, bc, ic)

    return loss


def empirical_loss(problem: PdeProblem, system, field, data: TrainingSet,
                   gamma_bc: float = 1.0, gamma_ic: float = 1.0, net: FieldNet | None = None) -> float:
    """``sum_j lambda_j mean_{S_{r,j}} r_j^2`` plus the active boundary/initial penalties.

    For an :class:`ExactField` only the interior term is evaluated (its
    boundary and initial data are exact by construction).
    """
    op = residual_operator(problem, system)
    if np.any(data.set_sizes() == 0):
        raise InvalidArgument("empty interior set")
    if op.n_equations != data.n_sets:
        raise InvalidArgument(f"{data.n_sets} interior sets for {op.n_equations} residual equations")
    X, member = data.union()
    W = data.loss_weights(member)
    if isinstance(field, NetField):
        batch = make_batch(op, data, X=X, member=member)
        total, _ = build_loss(op, field.net, gamma_bc, gamma_ic)(field.params, batch)
        return float(total)
    R = np.asarray(op.residual(field, X))
    return float(np.sum(W * R ** 2))
