"""Finite-difference oracles shared by the unit and acceptance suites."""

import jax
import jax.numpy as jnp
import numpy as np

from fempinn.fieldnet import ConstraintSpec, FieldNet

CONSTRAINT_NETS = {
    "none": lambda: FieldNet(2, 5, 16, 2, ConstraintSpec()),
    "periodic-fourier": lambda: FieldNet(1, 5, 16, 2, ConstraintSpec("periodic-fourier", period=(-1.0, 1.0),
                                                                     pinned=(0,), initial=lambda x: jnp.sin(3 * x[0]))),
    "dirichlet-ball": lambda: FieldNet(3, 5, 16, 2, ConstraintSpec("dirichlet-ball", pinned=(0,))),
    "dirichlet-box": lambda: FieldNet(2, 5, 16, 2, ConstraintSpec("dirichlet-box", box=((0.0, 0.0), (1.0, 1.0)),
                                                                  pinned=(0,), initial=lambda x: x[0] * x[1])),
}


def probe_points(net, rng, n):
    if net.constraint.boundary == "dirichlet-ball":
        X = rng.normal(size=(n, net.dim))
        return X / np.linalg.norm(X, axis=1, keepdims=True) * rng.uniform(0.1, 0.95, (n, 1))
    if net.constraint.boundary == "periodic-fourier":
        return rng.uniform(-1, 1, (n, 1))
    return rng.uniform(0.05, 0.95, (n, net.dim))


def jet_errors(net, params, X, h=1e-5):
    """Normwise relative error of the jet gradient and Hessian diagonal against central differences.

    The gradient is differenced from values, the Hessian diagonal from the jet gradient.
    """
    full = jax.jit(lambda p, Y: net.jet(p, Y, order=2))
    first = jax.jit(lambda p, Y: net.jet(p, Y, order=1))
    jet = full(params, X)
    g_fd = np.empty((len(X), net.n_out, net.dim))
    h_fd = np.empty_like(g_fd)
    for k in range(net.dim):
        e = np.zeros(net.dim)
        e[k] = h
        plus, minus = first(params, X + e), first(params, X - e)
        g_fd[..., k] = (np.asarray(plus.value) - np.asarray(minus.value)) / (2 * h)
        h_fd[..., k] = (np.asarray(plus.grad)[..., k] - np.asarray(minus.grad)[..., k]) / (2 * h)
    g, hd = np.asarray(jet.grad), np.asarray(jet.hess_diag)
    norm = lambda a: np.linalg.norm(a.reshape(len(X), -1), axis=1)
    return np.maximum(norm(g - g_fd) / np.maximum(norm(g_fd), 1.0),
                      norm(hd - h_fd) / np.maximum(norm(h_fd), 1.0))


def gradient_errors(net, params, X, rng, n_probes, h=1e-6):
    """Directional-derivative check of the reverse-mode gradient of a jet-based loss."""
    def loss(p):
        jet = net.jet(p, X)
        return jnp.mean(jet.value ** 2) + jnp.mean(jnp.sum(jet.hess_diag, -1) ** 2) + jnp.mean(jet.grad ** 2)

    loss = jax.jit(loss)
    grad = jax.grad(loss)(params)
    leaves, tree = jax.tree_util.tree_flatten(params)
    gleaves = jax.tree_util.tree_leaves(grad)
    errs = []
    for _ in range(n_probes):
        direction = [rng.normal(size=np.shape(a)) for a in leaves]
        exact = sum(float(np.sum(np.asarray(g) * d)) for g, d in zip(gleaves, direction))
        shift = lambda s: jax.tree_util.tree_unflatten(tree, [a + s * d for a, d in zip(leaves, direction)])
        fd = (float(loss(shift(h))) - float(loss(shift(-h)))) / (2 * h)
        errs.append(abs(exact - fd) / max(abs(fd), 1.0))
    return np.array(errs)
