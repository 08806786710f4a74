"""Temporal Galerkin and collocation operators.

Galerkin matrices use the convention ``A[j, i] = (phi_i', psi_j)`` and
``B[j, i] = (phi_i, psi_j)``, so for coefficients stored row-wise the
projected time derivative is ``omega @ A.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, LinearAlgebraFailure
from .timebasis import QuadratureRule, TimeBasis, gauss_rule

DEFAULT_COLLOCATION_K = {"lagrange-p1": 1, "lagrange-p2": 2, "hermite-c1": 2, "spline-c2": 2}


def default_quadrature_size(trial: TimeBasis, test: TimeBasis, nonlinearity_degree: int = 1) -> int:
    """Gauss points per element integrating ``phi^q * psi`` exactly."""
    exact_degree = trial.degree * max(int(nonlinearity_degree), 1) + test.degree
    return max(1, math.ceil((exact_degree + 1) / 2))


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    trial: TimeBasis
    test: TimeBasis
    quad: QuadratureRule
    times: np.ndarray        # all quadrature times, element by element
    weights: np.ndarray      # w_k * h_m
    trial_values: np.ndarray  # (n_q, N+1)
    trial_derivs: np.ndarray
    test_values: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def test_family(self) -> str:
        return self.test.family

    @property
    def projector(self) -> np.ndarray:
        """``P[q, j] = w_q psi_j(t_q)``: maps samples at quadrature times to ``(g, psi_j)``."""
        return self.weights[:, None] * self.test_values

    @property
    def n_equations(self) -> int:
        return self.test.size


def quadrature_points(basis: TimeBasis, quad: QuadratureRule):
    nodes = basis.partition.t_nodes
    h = basis.partition.element_widths
    times = (nodes[:-1, None] + h[:, None] * quad.nodes[None, :]).ravel()
    weights = (h[:, None] * quad.weights[None, :]).ravel()
    return times, weights


def assemble_galerkin(trial: TimeBasis, test: TimeBasis | None = None,
                      quad: QuadratureRule | None = None,
                      nonlinearity_degree: int = 1) -> GalerkinSystem:
    test = trial if test is None else test
    if not trial.partition.same_as(test.partition):
        raise InvalidArgument("trial and test bases must share one partition")
    if isinstance(test, TimeBasis) and trial.size != test.size:
        raise InvalidArgument("trial and test bases must have equal dimension")
    if quad is None:
        quad = gauss_rule(default_quadrature_size(trial, test, nonlinearity_degree))
    times, weights = quadrature_points(trial, quad)
    # Quadrature nodes sit strictly inside elements, so left-limit conventions never matter here.
    phi = trial.evaluate(times, 0)
    dphi = trial.evaluate(times, 1)
    psi = phi if test is trial else test.evaluate(times, 0)
    wpsi = weights[:, None] * psi
    A = wpsi.T @ dphi
    B = wpsi.T @ phi
    for arr in (times, weights, phi, dphi, psi, A, B):
        arr.setflags(write=False)
    return GalerkinSystem(trial, test, quad, times, weights, phi, dphi, psi, A, B)


def project_rhs(f_slice, test: TimeBasis, quad: QuadratureRule | None = None) -> np.ndarray:
    """``(f, psi_j)`` for every test function, by per-element Gauss quadrature."""
    if quad is None:
        quad = gauss_rule(test.degree + 1)
    times, weights = quadrature_points(test, quad)
    fv = np.asarray(f_slice(times), dtype=float)
    fv = np.broadcast_to(fv, times.shape)
    return (weights * fv) @ test.evaluate(times, 0)


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    basis: TimeBasis
    K: int
    times: np.ndarray   # S_t, strictly increasing
    D: np.ndarray       # (|S_t|, N+1) phi_i'(s_j)
    Phi: np.ndarray     # (|S_t|, N+1) phi_i(s_j)
    n_constrained: int

    @property
    def n_equations(self) -> int:
        return self.times.size


def build_collocation(basis: TimeBasis, K: int | None = None, n_constrained: int = 1,
                      include_initial: bool | None = None) -> CollocationGrid:
    """Gauss collocation grid ``s_{m,k} = t_{m-1} + h_m s_k`` with its evaluation matrices.

    ``include_initial`` prepends ``t_0`` to the grid; it defaults to on for
    ``hermite-c1``, whose free initial slope needs the equation at ``t_0``.
    """
    if K is None:
        K = DEFAULT_COLLOCATION_K[basis.family]
    if include_initial is None:
        include_initial = basis.family == "hermite-c1"
    rule = gauss_rule(K)
    M = basis.partition.n_elements
    n_cond = M * K + int(include_initial) + n_constrained
    if n_cond < basis.size:
        raise InvalidArgument(
            f"collocation is underdetermined: {M} elements x K={K} points"
            f"{' + 1 initial point' if include_initial else ''} + {n_constrained} constrained "
            f"coefficient(s) = {n_cond} conditions < {basis.size} basis functions; increase K")
    times, _ = quadrature_points(basis, rule)
    if include_initial:
        times = np.concatenate([[basis.partition.t_start], times])
    D = basis.evaluate(times, 1)
    Phi = basis.evaluate(times, 0)
    for arr in (times, D, Phi):
        arr.setflags(write=False)
    return CollocationGrid(basis, int(K), times, D, Phi, int(n_constrained))


def _solve(M, rhs):
    if M.shape[0] == M.shape[1]:
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > 1e14:
            raise LinearAlgebraFailure(f"singular time system (condition ~ {cond:.3e})", cond)
        return np.linalg.solve(M, rhs)
    sol, _, rank, sv = np.linalg.lstsq(M, rhs, rcond=None)
    if rank < M.shape[1]:
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        raise LinearAlgebraFailure(f"rank-deficient time system (condition ~ {cond:.3e})", cond)
    return sol


def ode_solve_direct(system, lam: float, f_slice) -> np.ndarray:
    """Coefficients of the FE solution of ``u' + lam u = f``, ``u(t_0) = 0``.

    Galerkin: row 0 of ``(A + lam B) u = F`` is replaced by ``u_0 = 0``
    (a Petrov-Galerkin system one row short gets the initial row prepended).
    Collocation: ``(D + lam Phi) u = f(S_t)`` plus the initial row; when that
    still leaves too few rows (Hermite) the equation itself is imposed at
    ``t_0``. Overdetermined collocation systems are solved in least squares.
    """
    if isinstance(system, GalerkinSystem):
        basis = system.trial
        M = system.A + lam * system.B
        F = np.asarray(system.projector.T @ np.broadcast_to(f_slice(system.times), system.times.shape))
        ic = basis.evaluate(basis.partition.t_start)
        if M.shape[0] == basis.size:
            M = M.copy()
            M[0] = ic
            F = F.copy()
            F[0] = 0.0
        else:
            M = np.vstack([ic[None, :], M])
            F = np.concatenate([[0.0], F])
        return _solve(M, F)
    if isinstance(system, CollocationGrid):
        basis = system.basis
        t0 = basis.partition.t_start
        rows = [system.D + lam * system.Phi, basis.evaluate(t0)[None, :]]
        rhs = [np.broadcast_to(f_slice(system.times), system.times.shape), [0.0]]
        if system.times.size + 1 < basis.size:
            rows.append((basis.evaluate(t0, 1) + lam * basis.evaluate(t0))[None, :])
            rhs.append([float(f_slice(np.array([t0]))[0])])
        return _solve(np.vstack(rows), np.concatenate([np.asarray(r, float) for r in rhs]))
    raise InvalidArgument(f"unsupported system type {type(system).__name__}")
