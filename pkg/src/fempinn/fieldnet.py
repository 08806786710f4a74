"""Spatial coefficient network ``omega(x; theta): R^d -> R^{N+1}``.

A plain tanh MLP whose output is post-processed so boundary and initial
conditions hold exactly. Spatial derivatives are propagated layer by layer
in Taylor form (only the Hessian diagonal is formed); parameter gradients
come from reverse mode.
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidArgument, NumericFailure

BOUNDARY_KINDS = ("none", "periodic-fourier", "dirichlet-ball", "dirichlet-box")
FOURIER_HARMONICS = 10


class MlpParams(NamedTuple):
    weights: tuple   # W_l with shape (M_l, M_{l-1})
    biases: tuple    # b_l with shape (M_l,)
    out: jax.Array   # a with shape (M_{L-1}, N+1); no output bias


class SpatialJet(NamedTuple):
    value: jax.Array      # (..., N+1)
    grad: jax.Array       # (..., N+1, d)
    hess_diag: jax.Array  # (..., N+1, d)


def init_glorot(seed, dims) -> MlpParams:
    """Glorot-normal weights (variance ``2 / (fan_in + fan_out)``), zero biases."""
    dims = [int(m) for m in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidArgument(f"invalid layer widths {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-2], dims[1:-1]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(jnp.asarray(rng.normal(0.0, std, size=(fan_out, fan_in))))
        biases.append(jnp.zeros(fan_out))
    std = np.sqrt(2.0 / (dims[-2] + dims[-1]))
    out = jnp.asarray(rng.normal(0.0, std, size=(dims[-2], dims[-1])))
    return MlpParams(tuple(weights), tuple(biases), out)


def param_widths(params: MlpParams) -> list[int]:
    return [params.weights[0].shape[1]] + [w.shape[0] for w in params.weights] + [params.out.shape[1]]


def mlp(params: MlpParams, v):
    h = v
    for W, b in zip(params.weights, params.biases):
        h = jnp.tanh(W @ h + b)
    return h @ params.out


def fourier_embed(x, period: float, x_min: float = 0.0, harmonics: int = FOURIER_HARMONICS):
    """``{1, cos(k w (x - x_min)), sin(k w (x - x_min))}_{k=1..M}`` with ``w = 2 pi / period``."""
    if period <= 0:
        raise InvalidArgument("period must be positive")
    x = jnp.asarray(x)
    arg = (2.0 * jnp.pi / period) * (x[..., 0] - x_min)
    k = jnp.arange(1, harmonics + 1)
    ka = arg[..., None] * k
    feats = jnp.stack([jnp.cos(ka), jnp.sin(ka)], axis=-1).reshape(ka.shape[:-1] + (2 * harmonics,))
    return jnp.concatenate([jnp.ones(arg.shape + (1,)), feats], axis=-1)


@dataclass(frozen=True)
class ConstraintSpec:
    """Hard constraints baked into the network output.

    ``boundary`` picks at most one spatial transform; ``pinned`` lists
    coefficients replaced by the initial data ``initial(x)`` (zero when
    ``initial`` is None).
    """

    boundary: str = "none"
    period: tuple | None = None        # (x_min, x_max) for periodic-fourier
    radius: float = 1.0                # dirichlet-ball
    box: tuple | None = None           # ((lo_1..lo_d), (hi_1..hi_d)) for dirichlet-box
    pinned: tuple = ()
    initial: Callable | None = None

    def __post_init__(self):
        if self.boundary not in BOUNDARY_KINDS:
            raise InvalidArgument(f"unknown constraint kind {self.boundary!r}")
        if self.boundary == "periodic-fourier" and self.period is None:
            raise InvalidArgument("periodic-fourier needs period=(x_min, x_max)")
        if self.boundary == "dirichlet-box" and self.box is None:
            raise InvalidArgument("dirichlet-box needs box=(lo, hi)")

    def with_initial(self, initial) -> "ConstraintSpec":
        return dataclasses.replace(self, initial=initial)

    def describe(self) -> str:
        parts = [self.boundary]
        if self.pinned:
            parts.append("pinned=" + ",".join(str(i) for i in self.pinned))
        return ";".join(parts)


@dataclass(frozen=True)
class FieldNet:
    """Network architecture plus constraints; parameters are passed separately."""

    dim: int
    n_out: int
    width: int = 128
    depth: int = 4
    constraint: ConstraintSpec = ConstraintSpec()

    @property
    def embed_dim(self) -> int:
        if self.constraint.boundary == "periodic-fourier":
            return 2 * FOURIER_HARMONICS + 1
        return self.dim

    @property
    def widths(self) -> list[int]:
        return [self.embed_dim] + [self.width] * self.depth + [self.n_out]

    def init(self, seed) -> MlpParams:
        return init_glorot(seed, self.widths)

    def embed(self, x):
        c = self.constraint
        if c.boundary == "periodic-fourier":
            lo, hi = c.period
            return fourier_embed(x, hi - lo, lo)
        return x

    def spatial_factor(self, x):
        c = self.constraint
        if c.boundary == "dirichlet-ball":
            return jnp.sqrt(jnp.sum(x * x)) - c.radius
        if c.boundary == "dirichlet-box":
            lo, hi = (jnp.asarray(v, dtype=float) for v in c.box)
            return jnp.prod((x - lo) * (hi - x))
        return None

    def omega_free(self, params, x):
        """Constrained output before initial-coefficient pinning (single point)."""
        out = mlp(params, self.embed(x))
        factor = self.spatial_factor(x)
        return out if factor is None else out * factor

    def omega(self, params, x):
        """Fully constrained coefficients at a single point ``x`` of shape ``(d,)``."""
        out = self.omega_free(params, x)
        c = self.constraint
        if c.pinned:
            g = c.initial(x) if c.initial is not None else jnp.zeros(())
            out = out.at[jnp.asarray(c.pinned)].set(g)
        return out

    def values(self, params, X):
        return jax.vmap(lambda x: self.omega(params, x))(X)

    def jet(self, params, X, order: int = 2, pinned_jet: SpatialJet | None = None) -> SpatialJet:
        """Value, gradient and Hessian diagonal of ``omega`` for a batch ``X`` of shape ``(n, d)``.

        Derivatives are propagated through the tanh layers in Taylor form
        (one stacked matmul per layer). ``pinned_jet`` may carry the jet of
        the initial data at ``X`` when it has been computed once in advance.
        """
        X = jnp.asarray(X)
        if X.shape[-1] != self.dim:
            raise InvalidArgument(f"expected points of dimension {self.dim}, got {X.shape[-1]}")
        single = X.ndim == 1
        Xb = X[None] if single else X
        jet = self._batch_jet(params, Xb, order, pinned_jet)
        if single:
            jet = SpatialJet(*(None if a is None else a[0] for a in jet))
        return jet

    def _batch_jet(self, params, X, order, pinned_jet):
        d = self.dim
        n_dir = d if order >= 1 else 0
        V, dV, d2V = jax.vmap(lambda x: _scalar_jet(self.embed, x, order))(X)
        streams = [V[:, None, :]]
        if order >= 1:
            streams.append(dV)
        if order >= 2:
            streams.append(d2V)
        S = jnp.concatenate(streams, axis=1)
        for W, b in zip(params.weights, params.biases):
            Z = S @ W.T
            t = jnp.tanh(Z[:, 0] + b)
            parts = [t[:, None]]
            if order >= 1:
                s = (1.0 - t * t)[:, None]
                dz = Z[:, 1:1 + n_dir]
                parts.append(s * dz)
                if order >= 2:
                    parts.append(s * Z[:, 1 + n_dir:] - 2.0 * t[:, None] * s * dz * dz)
            S = jnp.concatenate(parts, axis=1)
        O = S @ params.out
        value = O[:, 0]
        grad = jnp.swapaxes(O[:, 1:1 + n_dir], 1, 2) if order >= 1 else None
        hess = jnp.swapaxes(O[:, 1 + n_dir:], 1, 2) if order >= 2 else None
        if self.spatial_factor(X[0]) is not None:
            s0, s1, s2 = jax.vmap(lambda x: _scalar_jet(self.spatial_factor, x, order))(X)
            if order >= 2:
                hess = s2[:, None, :] * value[..., None] + 2.0 * s1[:, None, :] * grad + s0[:, None, None] * hess
            if order >= 1:
                grad = s1[:, None, :] * value[..., None] + s0[:, None, None] * grad
            value = s0[:, None] * value
        c = self.constraint
        if c.pinned:
            if pinned_jet is None:
                pinned_jet = self.initial_jet(X, order)
            idx = jnp.asarray(c.pinned)
            value = value.at[:, idx].set(pinned_jet.value[:, None])
            if order >= 1:
                grad = grad.at[:, idx, :].set(pinned_jet.grad[:, None, :])
            if order >= 2:
                hess = hess.at[:, idx, :].set(pinned_jet.hess_diag[:, None, :])
        return SpatialJet(value, grad, hess)

    def initial_jet(self, X, order: int = 2) -> SpatialJet:
        """Jet of the pinned initial data at a batch ``X``."""
        g = self.constraint.initial
        if g is None:
            g = lambda x: jnp.zeros((), dtype=x.dtype)
        v, d1, d2 = jax.vmap(lambda x: _scalar_jet(g, x, order))(jnp.asarray(X))
        return SpatialJet(v, d1 if order >= 1 else None, d2 if order >= 2 else None)


def _scalar_jet(f, x, order):
    """``f(x)``, first and pure second derivatives along each coordinate (stacked on axis 0)."""
    val = f(x)
    eye = jnp.eye(x.shape[0], dtype=x.dtype)
    if order == 0:
        return val, None, None
    if order == 1:
        d1 = jax.vmap(lambda e: jax.jvp(f, (x,), (e,))[1])(eye)
        return val, d1, None

    def along(e):
        return jax.jvp(lambda y: jax.jvp(f, (y,), (e,))[1], (x,), (e,))

    d1, d2 = jax.vmap(along)(eye)
    return val, d1, d2


def forward_jet(net: FieldNet, params: MlpParams, x, order: int = 2) -> SpatialJet:
    return net.jet(params, x, order)


def loss_gradient(params, loss):
    """Reverse-mode gradient of the scalar ``loss(params)``; returns ``(value, grad)``."""
    value, grad = jax.value_and_grad(loss)(params)
    if not np.isfinite(float(value)):
        raise NumericFailure(f"loss is not finite ({float(value)})")
    return value, grad


# -- checkpoints ------------------------------------------------------------

_MAGIC = "fempinn-checkpoint 1"


def flatten_params(params: MlpParams) -> np.ndarray:
    parts = []
    for W, b in zip(params.weights, params.biases):
        parts += [np.asarray(W).ravel(), np.asarray(b).ravel()]
    parts.append(np.asarray(params.out).ravel())
    return np.concatenate(parts)


def unflatten_params(flat: np.ndarray, widths) -> MlpParams:
    flat = np.asarray(flat, dtype=float)
    pos = 0
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-2], widths[1:-1]):
        weights.append(jnp.asarray(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)))
        pos += fan_in * fan_out
        biases.append(jnp.asarray(flat[pos:pos + fan_out]))
        pos += fan_out
    n = widths[-2] * widths[-1]
    out = jnp.asarray(flat[pos:pos + n].reshape(widths[-2], widths[-1]))
    pos += n
    if pos != flat.size:
        raise InvalidArgument(f"parameter count mismatch: {flat.size} values for widths {widths}")
    return MlpParams(tuple(weights), tuple(biases), out)


def save_checkpoint(path, params: MlpParams, meta: dict | None = None) -> None:
    """Text header (``key: value`` lines, ``end`` terminator) then float64 little-endian parameters."""
    flat = flatten_params(params)
    header = {"widths": ",".join(str(w) for w in param_widths(params)), "count": str(flat.size)}
    for k, v in (meta or {}).items():
        header[str(k)] = str(v).replace("\n", " ")
    buf = io.StringIO()
    buf.write(_MAGIC + "\n")
    for k, v in header.items():
        buf.write(f"{k}: {v}\n")
    buf.write("end\n")
    with open(path, "wb") as fh:
        fh.write(buf.getvalue().encode("utf-8"))
        fh.write(struct.pack(f"<{flat.size}d", *flat))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    meta = {}
    pos = 0
    first = True
    while True:
        nl = raw.index(b"\n", pos)
        line = raw[pos:nl].decode("utf-8")
        pos = nl + 1
        if first:
            if line != _MAGIC:
                raise InvalidArgument(f"{path} is not a checkpoint file")
            first = False
            continue
        if line == "end":
            break
        key, _, value = line.partition(": ")
        meta[key] = value
    widths = [int(w) for w in meta["widths"].split(",")]
    count = int(meta["count"])
    flat = np.frombuffer(raw[pos:pos + 8 * count], dtype="<f8")
    return unflatten_params(flat, widths), meta
