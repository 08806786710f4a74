"""Benchmark evolution problems ``u_t + N[u] = f``.

Operators receive time slices of the solution and its spatial derivatives
with NumPy-style broadcasting: ``u`` has shape ``(..., T)``, ``ux``/``uxx``
``(..., T, d)`` and ``x`` ``(..., 1, d)``. The same callables are reused with
the time axis replaced by the basis index for the linear fast path.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidArgument

PROBLEMS = ("convection", "allen-cahn-1d", "parabolic-varcoef", "allen-cahn-ball", "heat-2d-peak")


@dataclass(frozen=True)
class PdeProblem:
    name: str
    dim: int
    domain: str                     # interval | box | ball
    lower: tuple                    # bounding box of the domain
    upper: tuple
    t_span: tuple
    operator: Callable              # N[u](u, ux, uxx, x, t)
    source: Callable                # f(x, t)
    initial: Callable               # g(x) for a single point x of shape (d,)
    boundary: str                   # periodic | dirichlet
    params: dict = field(default_factory=dict)
    exact: Callable | None = None   # u(x, t), broadcasting
    linear: bool = False            # linear and time independent in u
    derivative_order: int = 2
    nonlinearity_degree: int = 1
    oracles: tuple = ()             # exact solutions of the same operator and source
    radius: float = 1.0

    @property
    def t_start(self) -> float:
        return float(self.t_span[0])

    @property
    def t_end(self) -> float:
        return float(self.t_span[1])

    def boundary_values(self, x, t):
        if self.exact is None:
            return jnp.zeros(jnp.broadcast_shapes(jnp.shape(x)[:-1], jnp.shape(t)))
        return self.exact(x, t)

    def contains(self, X, tol: float = 1e-12) -> np.ndarray:
        X = np.asarray(X)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        inside = np.all((X >= lo - tol) & (X <= hi + tol), axis=-1)
        if self.domain == "ball":
            inside &= np.linalg.norm(X, axis=-1) <= self.radius + tol
        return inside

    # -- sampling -------------------------------------------------------------

    def sample_interior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.domain == "ball":
            direction = rng.normal(size=(n, self.dim))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            radius = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / self.dim)
            return direction * radius
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + (hi - lo) * rng.uniform(size=(n, self.dim))

    def uniform_mesh(self, n: int) -> np.ndarray:
        """``n`` equispaced points on an interval domain (endpoints included)."""
        if self.dim != 1:
            raise InvalidArgument("uniform_mesh is only defined on intervals")
        return np.linspace(self.lower[0], self.upper[0], n)[:, None]

    def sample_boundary(self, rng: np.random.Generator, n: int):
        """Points on the boundary with uniform times in ``t_span``."""
        t = rng.uniform(self.t_start, self.t_end, size=n)
        if self.domain == "ball":
            x = rng.normal(size=(n, self.dim))
            x *= self.radius / np.linalg.norm(x, axis=1, keepdims=True)
            return x, t
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        x = lo + (hi - lo) * rng.uniform(size=(n, self.dim))
        face = rng.integers(0, self.dim, size=n)
        side = rng.integers(0, 2, size=n)
        x[np.arange(n), face] = np.where(side == 0, lo[face], hi[face])
        return x, t


# -- helpers -----------------------------------------------------------------

def _sq(x):
    return jnp.sum(x * x, axis=-1)


def _lap(uxx):
    return jnp.sum(uxx, axis=-1)


# -- convection --------------------------------------------------------------

def convection(beta: float = 10.0) -> PdeProblem:
    def operator(u, ux, uxx, x, t):
        return beta * ux[..., 0]

    def source(x, t):
        return jnp.zeros(jnp.broadcast_shapes(jnp.shape(x)[:-1], jnp.shape(t)))

    def exact(x, t):
        return jnp.sin(x[..., 0] - beta * t)

    return PdeProblem(
        name="convection", dim=1, domain="interval", lower=(0.0,), upper=(2 * np.pi,),
        t_span=(0.0, 1.0), operator=operator, source=source,
        initial=lambda x: jnp.sin(x[0]), boundary="periodic", params={"beta": beta},
        exact=exact, linear=True, derivative_order=1, oracles=(exact,))


# -- Allen-Cahn, 1-D periodic -----------------------------------------------

def allen_cahn_1d(c1sq: float = 1e-4, c2: float = 5.0) -> PdeProblem:
    def operator(u, ux, uxx, x, t):
        return -c1sq * uxx[..., 0] + c2 * (u ** 3 - u)

    def source(x, t):
        return jnp.zeros(jnp.broadcast_shapes(jnp.shape(x)[:-1], jnp.shape(t)))

    slope = np.sqrt(c2 / 2.0) / np.sqrt(c1sq)

    def kink(x, t):
        # stationary front: c1^2 u'' = c2 (u^3 - u)
        return jnp.tanh(slope * (x[..., 0] - 0.1)) + 0.0 * t

    def uniform_state(x, t, u0=0.3):
        # spatially constant solution of u' = -c2 (u^3 - u)
        e = jnp.exp(2.0 * c2 * t)
        return u0 * jnp.sqrt(e) / jnp.sqrt(1.0 + u0 ** 2 * (e - 1.0)) + 0.0 * x[..., 0]

    return PdeProblem(
        name="allen-cahn-1d", dim=1, domain="interval", lower=(-1.0,), upper=(1.0,),
        t_span=(0.0, 1.0), operator=operator, source=source,
        initial=lambda x: x[0] ** 2 * jnp.cos(jnp.pi * x[0]), boundary="periodic",
        params={"c1sq": c1sq, "c2": c2}, exact=None, linear=False, derivative_order=2,
        nonlinearity_degree=3, oracles=(kink, uniform_state))


# -- ball problems with u = sin(sin(2 pi w t)(|x|^2 - 1)) ----------------------

def _ball_exact(omega):
    def exact(x, t):
        return jnp.sin(jnp.sin(2 * jnp.pi * omega * t) * (_sq(x) - 1.0))
    return exact


def _ball_parts(x, t, omega, d):
    r2 = _sq(x)
    q = r2 - 1.0
    S = jnp.sin(2 * jnp.pi * omega * t)
    C = jnp.cos(2 * jnp.pi * omega * t)
    arg = S * q
    u = jnp.sin(arg)
    u_t = jnp.cos(arg) * q * 2 * jnp.pi * omega * C
    lap = -jnp.sin(arg) * S ** 2 * 4.0 * r2 + jnp.cos(arg) * S * 2.0 * d
    return u, u_t, lap, S, arg, r2


def parabolic_varcoef(dim: int = 5, omega: float = 3.0) -> PdeProblem:
    """``u_t - div(a grad u) = f`` on the unit ball, ``a = 1 + |x|^2 / 2``."""

    def operator(u, ux, uxx, x, t):
        a = 1.0 + 0.5 * _sq(x)
        return -(a * _lap(uxx) + jnp.sum(x * ux, axis=-1))

    def source(x, t):
        u, u_t, lap, S, arg, r2 = _ball_parts(x, t, omega, dim)
        a = 1.0 + 0.5 * r2
        return u_t - a * lap - 2.0 * r2 * S * jnp.cos(arg)

    exact = _ball_exact(omega)
    return PdeProblem(
        name="parabolic-varcoef", dim=dim, domain="ball", lower=(-1.0,) * dim, upper=(1.0,) * dim,
        t_span=(0.0, 1.0), operator=operator, source=source, initial=lambda x: jnp.zeros(()),
        boundary="dirichlet", params={"dim": dim, "omega": omega}, exact=exact, linear=True,
        derivative_order=2, oracles=(exact,))


def allen_cahn_ball(dim: int = 5, omega: float = 3.0) -> PdeProblem:
    """``u_t - lap u + u^3 - u = f`` on the unit ball."""

    def operator(u, ux, uxx, x, t):
        return -_lap(uxx) + u ** 3 - u

    def source(x, t):
        u, u_t, lap, *_ = _ball_parts(x, t, omega, dim)
        return u_t - lap + u ** 3 - u

    exact = _ball_exact(omega)
    return PdeProblem(
        name="allen-cahn-ball", dim=dim, domain="ball", lower=(-1.0,) * dim, upper=(1.0,) * dim,
        t_span=(0.0, 1.0), operator=operator, source=source, initial=lambda x: jnp.zeros(()),
        boundary="dirichlet", params={"dim": dim, "omega": omega}, exact=exact, linear=False,
        derivative_order=2, nonlinearity_degree=3, oracles=(exact,))


# -- heat equation with a moving peak --------------------------------------------

def heat_2d_peak(beta: float = 200.0) -> PdeProblem:
    def exact(x, t):
        return jnp.exp(-beta * ((x[..., 0] - t - 0.25) ** 2 + (x[..., 1] - t - 0.25) ** 2))

    def operator(u, ux, uxx, x, t):
        return -_lap(uxx)

    def source(x, t):
        y1 = x[..., 0] - t - 0.25
        y2 = x[..., 1] - t - 0.25
        r2 = y1 ** 2 + y2 ** 2
        u = jnp.exp(-beta * r2)
        u_t = 2.0 * beta * u * (y1 + y2)
        lap = u * (4.0 * beta ** 2 * r2 - 4.0 * beta)
        return u_t - lap

    return PdeProblem(
        name="heat-2d-peak", dim=2, domain="box", lower=(0.0, 0.0), upper=(1.0, 1.0),
        t_span=(0.0, 0.5), operator=operator, source=source,
        initial=lambda x: exact(x, 0.0), boundary="dirichlet", params={"beta": beta},
        exact=exact, linear=True, derivative_order=2, oracles=(exact,))


_FACTORIES = {
    "convection": (convection, ("beta",)),
    "allen-cahn-1d": (allen_cahn_1d, ("c1sq", "c2")),
    "parabolic-varcoef": (parabolic_varcoef, ("dim", "omega")),
    "allen-cahn-ball": (allen_cahn_ball, ("dim", "omega")),
    "heat-2d-peak": (heat_2d_peak, ("beta",)),
}


def make_problem(name: str, **params) -> PdeProblem:
    try:
        factory, allowed = _FACTORIES[name]
    except KeyError:
        raise InvalidArgument(f"unknown problem {name!r}; expected one of {PROBLEMS}") from None
    unknown = set(params) - set(allowed)
    if unknown:
        raise InvalidArgument(f"unknown parameter(s) {sorted(unknown)} for {name}")
    if "dim" in params:
        params["dim"] = int(params["dim"])
    return factory(**params)


def problem_parameters(name: str) -> tuple:
    return _FACTORIES[name][1]


def exact_jet(fn, X, times, order: int = 2):
    """Values, time derivative, gradient and Hessian diagonal of ``fn`` on ``X x times``.

    Returns arrays of shapes ``(n, T)``, ``(n, T)``, ``(n, T, d)``, ``(n, T, d)``.
    """
    return _exact_jet(fn, jnp.asarray(X), jnp.asarray(times), order)


@functools.partial(jax.jit, static_argnums=(0, 3))
def _exact_jet(fn, X, times, order):
    times = jnp.asarray(times, dtype=X.dtype)
    d = X.shape[-1]
    eye = jnp.eye(d, dtype=X.dtype)

    def point(x, t):
        f = lambda y: fn(y, t)
        u = f(x)
        u_t = jax.grad(lambda s: fn(x, s))(t)
        g = jax.grad(f)(x)
        if order < 2:
            return u, u_t, g, jnp.zeros_like(g)
        h = jax.vmap(lambda e: jax.jvp(lambda y: jax.jvp(f, (y,), (e,))[1], (x,), (e,))[1])(eye)
        return u, u_t, g, h

    over_t = jax.vmap(point, in_axes=(None, 0))
    return jax.vmap(over_t, in_axes=(0, None))(X, times)
