"""Density models for residual-driven sampling.

* :class:`TemporalSplineDensity`: a piecewise-linear pdf on ``[0, 1]`` whose
  cdf is piecewise quadratic and has a closed-form inverse.
* :class:`ConditionalSpatialFlow`: a lower-triangular (Knothe-Rosenblatt
  type) flow on the unit box, conditioned on the normalized time ``s``. Each
  layer maps coordinate ``k`` through a bounded spline cdf whose knot weights
  come from a small tanh network of ``(x_1..x_{k-1}, s)``.

Both work in normalized coordinates; :class:`JointDensity` adds the affine
maps to physical space and time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidArgument

DEFAULT_KNOTS = 32
DEFAULT_LAYERS = 8
DEFAULT_HIDDEN = 32
_TOL = 1e-12


# -- piecewise-linear spline pdf / quadratic cdf ----------------------------------------

def uniform_knots(m: int = DEFAULT_KNOTS) -> np.ndarray:
    if m < 1:
        raise InvalidArgument("need at least one spline cell")
    return np.linspace(0.0, 1.0, m + 1)


def knot_weights(ktilde, knots):
    """``k_j = exp(k~_j) / C`` with ``C`` the trapezoid integral of ``exp(k~)``."""
    e = jnp.exp(ktilde - jnp.max(ktilde, axis=-1, keepdims=True))
    h = jnp.diff(knots)
    C = jnp.sum(0.5 * (e[..., :-1] + e[..., 1:]) * h, axis=-1, keepdims=True)
    return e / C


def _cell(knots, s):
    m = knots.shape[0] - 1
    return jnp.clip(jnp.searchsorted(knots, s, side="right") - 1, 0, m - 1)


def _cum(k, knots):
    h = jnp.diff(knots)
    masses = 0.5 * (k[..., :-1] + k[..., 1:]) * h
    return jnp.concatenate([jnp.zeros(k.shape[:-1] + (1,)), jnp.cumsum(masses, axis=-1)], axis=-1)


def _take(a, j):
    if a.ndim == 1:
        return a[j]
    return jnp.take_along_axis(a, j[..., None], axis=-1)[..., 0]


def pdf_from_weights(k, knots, s):
    j = _cell(knots, s)
    l0, h = knots[j], knots[j + 1] - knots[j]
    k0, k1 = _take(k, j), _take(k, j + 1)
    return k0 + (k1 - k0) * (s - l0) / h


def cdf_from_weights(k, knots, s):
    j = _cell(knots, s)
    l0, h = knots[j], knots[j + 1] - knots[j]
    k0, k1 = _take(k, j), _take(k, j + 1)
    y = s - l0
    return _take(_cum(k, knots), j) + k0 * y + 0.5 * (k1 - k0) / h * y * y


def cdf_inverse_from_weights(k, knots, u):
    F = _cum(k, knots)
    m = knots.shape[0] - 1
    j = jnp.clip(jnp.sum(F[..., 1:-1] <= u[..., None], axis=-1), 0, m - 1)
    l0, h = knots[j], knots[j + 1] - knots[j]
    k0, k1 = _take(k, j), _take(k, j + 1)
    c = jnp.maximum(u - _take(F, j), 0.0)
    a = 0.5 * (k1 - k0) / h
    # root of a y^2 + k0 y - c = 0 inside the cell, written without cancellation
    den = k0 + jnp.sqrt(jnp.maximum(k0 * k0 + 4.0 * a * c, 0.0))
    y = jnp.where(den > 0, 2.0 * c / jnp.where(den > 0, den, 1.0), 0.0)
    return jnp.clip(l0 + y, knots[0], knots[-1])


def _check_unit(v, name):
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < -_TOL) or np.any(v > 1 + _TOL):
        raise InvalidArgument(f"{name} must lie in [0, 1]")
    return np.clip(v, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class TemporalSplineDensity:
    knots: np.ndarray
    ktilde: jax.Array

    @classmethod
    def uniform(cls, m: int = DEFAULT_KNOTS) -> "TemporalSplineDensity":
        return cls(uniform_knots(m), jnp.zeros(m + 1))

    @classmethod
    def from_weights(cls, knots, k) -> "TemporalSplineDensity":
        """Density with prescribed nodal pdf values (zeros allowed, rescaled to unit mass)."""
        k = np.asarray(k, dtype=float)
        if np.any(k < 0) or not np.any(k > 0):
            raise InvalidArgument("nodal weights must be non-negative and not all zero")
        with np.errstate(divide="ignore"):
            return cls(np.asarray(knots, dtype=float), jnp.asarray(np.log(k)))

    @property
    def weights(self):
        return knot_weights(self.ktilde, jnp.asarray(self.knots))

    def pdf(self, s):
        return np.array(pdf_from_weights(self.weights, jnp.asarray(self.knots), jnp.asarray(_check_unit(s, "s"))))

    def cdf(self, s):
        return np.array(cdf_from_weights(self.weights, jnp.asarray(self.knots), jnp.asarray(_check_unit(s, "s"))))

    def cdf_inverse(self, u):
        return np.array(cdf_inverse_from_weights(self.weights, jnp.asarray(self.knots),
                                                   jnp.asarray(_check_unit(u, "u"))))

    def total_mass(self) -> float:
        """Closed-form trapezoid integral of the pdf (one by construction)."""
        k = np.asarray(self.weights)
        return float(np.sum(0.5 * (k[:-1] + k[1:]) * np.diff(self.knots)))


def spline_pdf(density: TemporalSplineDensity, s):
    return density.pdf(s)


def spline_cdf(density: TemporalSplineDensity, s):
    return density.cdf(s)


def spline_cdf_inverse(density: TemporalSplineDensity, u):
    return density.cdf_inverse(u)


# -- conditional flow ---------------------------------------------------------------

class Conditioner(NamedTuple):
    weights: tuple
    biases: tuple


def _init_conditioner(rng, n_in, hidden, n_hidden, n_out):
    dims = [n_in] + [hidden] * n_hidden
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.normal(0.0, std, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out))
    # zero output layer: every spline starts as the identity map
    weights.append(jnp.zeros((n_out, dims[-1])))
    biases.append(jnp.zeros(n_out))
    return Conditioner(tuple(weights), tuple(biases))


def _conditioner_apply(c: Conditioner, inputs):
    h = 2.0 * inputs - 1.0
    for W, b in zip(c.weights[:-1], c.biases[:-1]):
        h = jnp.tanh(h @ W.T + b)
    return h @ c.weights[-1].T + c.biases[-1]


@dataclass(frozen=True, eq=False)
class ConditionalSpatialFlow:
    """Architecture; parameters are a tuple (layers) of tuples (coordinates) of conditioners."""

    dim: int
    n_layers: int = DEFAULT_LAYERS
    knots: int = DEFAULT_KNOTS
    hidden: int = DEFAULT_HIDDEN
    n_hidden: int = 2

    def init(self, seed):
        rng = np.random.default_rng(seed)
        return tuple(tuple(_init_conditioner(rng, k + 1, self.hidden, self.n_hidden, self.knots + 1)
                           for k in range(self.dim))
                     for _ in range(self.n_layers))

    @property
    def knot_grid(self):
        return jnp.asarray(uniform_knots(self.knots))

    def _weights(self, cond, prev, s):
        inputs = jnp.concatenate([prev, s[:, None]], axis=1)
        return knot_weights(_conditioner_apply(cond, inputs), self.knot_grid)

    def forward(self, params, X, s):
        """``z = f(x, s)`` and ``log |det df/dx|`` for a batch in the unit box."""
        X = jnp.asarray(X)
        s = jnp.broadcast_to(jnp.asarray(s, dtype=X.dtype), X.shape[:1])
        knots = self.knot_grid
        logdet = jnp.zeros(X.shape[0])
        z = X
        for layer in params:
            cols = []
            for k, cond in enumerate(layer):
                w = self._weights(cond, z[:, :k], s)
                xk = jnp.clip(z[:, k], 0.0, 1.0)
                cols.append(cdf_from_weights(w, knots, xk))
                logdet = logdet + jnp.log(pdf_from_weights(w, knots, xk))
            z = jnp.stack(cols, axis=1)
        return z, logdet

    def inverse(self, params, Z, s):
        Z = jnp.asarray(Z)
        s = jnp.broadcast_to(jnp.asarray(s, dtype=Z.dtype), Z.shape[:1])
        knots = self.knot_grid
        x = Z
        for layer in reversed(params):
            cols = []
            for k, cond in enumerate(layer):
                prev = jnp.stack(cols, axis=1) if cols else jnp.zeros((x.shape[0], 0))
                w = self._weights(cond, prev, s)
                cols.append(cdf_inverse_from_weights(w, knots, jnp.clip(x[:, k], 0.0, 1.0)))
            x = jnp.stack(cols, axis=1)
        return x

    def logdensity(self, params, X, s):
        """``log p(x | s)`` on the unit box (uniform prior, so only the log-determinant)."""
        return self.forward(params, X, s)[1]


def _check_box(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidArgument(f"expected points of shape (n, {dim})")
    return _check_unit(X, "points")


def flow_forward(flow: ConditionalSpatialFlow, params, X, s):
    return flow.forward(params, jnp.asarray(_check_box(X, flow.dim)), jnp.asarray(s))


def flow_inverse(flow: ConditionalSpatialFlow, params, Z, s):
    return flow.inverse(params, jnp.asarray(_check_box(Z, flow.dim)), jnp.asarray(s))


def flow_logdensity(flow: ConditionalSpatialFlow, params, X, s):
    return flow.logdensity(params, jnp.asarray(_check_box(X, flow.dim)), jnp.asarray(s))


def flow_sample(flow: ConditionalSpatialFlow, params, s, count: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Z = rng.uniform(size=(int(count), flow.dim))
    s = np.broadcast_to(np.asarray(s, dtype=float), (int(count),))
    return np.asarray(flow.inverse(params, jnp.asarray(Z), jnp.asarray(s)))


# -- joint density in physical coordinates --------------------------------------------

class JointParams(NamedTuple):
    ktilde: jax.Array
    flow: tuple


@dataclass(frozen=True, eq=False)
class JointDensity:
    """``p(x, t) = p_poly(s) p_flow(z | s)`` with affine maps ``s = (t - t0)/(t1 - t0)``, ``z = (x - lo)/(hi - lo)``."""

    flow: ConditionalSpatialFlow
    t_span: tuple
    lower: tuple
    upper: tuple
    knots: np.ndarray

    @classmethod
    def for_problem(cls, problem, t_span=None, n_layers=DEFAULT_LAYERS, knots=DEFAULT_KNOTS,
                    hidden=DEFAULT_HIDDEN):
        flow = ConditionalSpatialFlow(problem.dim, n_layers, knots, hidden)
        return cls(flow, tuple(t_span or problem.t_span), tuple(problem.lower), tuple(problem.upper),
                   uniform_knots(knots))

    def init(self, seed) -> JointParams:
        return JointParams(jnp.zeros(self.knots.size), self.flow.init(seed))

    def normalize(self, X, t):
        lo, hi = jnp.asarray(self.lower), jnp.asarray(self.upper)
        t0, t1 = self.t_span
        return (jnp.asarray(X) - lo) / (hi - lo), (jnp.asarray(t) - t0) / (t1 - t0)

    def log_volume(self) -> float:
        return float(np.sum(np.log(np.subtract(self.upper, self.lower))) + np.log(self.t_span[1] - self.t_span[0]))

    def logpdf(self, params: JointParams, X, t):
        Z, s = self.normalize(X, t)
        s = jnp.clip(s, 0.0, 1.0)
        knots = jnp.asarray(self.knots)
        lp_t = jnp.log(pdf_from_weights(knot_weights(params.ktilde, knots), knots, s))
        return lp_t + self.flow.logdensity(params.flow, jnp.clip(Z, 0.0, 1.0), s) - self.log_volume()

    def temporal(self, params: JointParams) -> TemporalSplineDensity:
        return TemporalSplineDensity(self.knots, params.ktilde)

    def sample_times(self, params: JointParams, count: int, rng) -> np.ndarray:
        u = rng.uniform(size=int(count))
        s = self.temporal(params).cdf_inverse(u)
        return self.t_span[0] + (self.t_span[1] - self.t_span[0]) * s

    def sample_space(self, params: JointParams, t, rng) -> np.ndarray:
        """One spatial point per entry of ``t`` from ``p(x | t)``."""
        t = np.asarray(t, dtype=float)
        s = (t - self.t_span[0]) / (self.t_span[1] - self.t_span[0])
        Z = rng.uniform(size=(t.size, self.flow.dim))
        z = np.asarray(self.flow.inverse(params.flow, jnp.asarray(Z), jnp.asarray(s)))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + (hi - lo) * z

    def sample(self, params: JointParams, count: int, rng):
        t = self.sample_times(params, count, rng)
        return self.sample_space(params, t, rng), t
