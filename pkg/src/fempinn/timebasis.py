"""Time finite-element bases on a 1-D partition.

Every family is stored the same way: a local-to-global dof map per element
and, for each local function, its polynomial coefficients in the reference
coordinate ``xi = (t - t_{m-1}) / h_m`` (power basis, lowest degree first).
Evaluation therefore reduces to locating the element and running Horner.

Supported families and their global numbering:

``lagrange-p1``  nodal hats, index = node, ``N = M``
``lagrange-p2``  nodes and element midpoints left to right, ``N = 2M``
``hermite-c1``   (value, slope) interleaved per node, ``N = 2M + 1``
``spline-c2``    clamped uniform cubic B-splines, ``N = M + 2``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfDomain

FAMILIES = ("lagrange-p1", "lagrange-p2", "hermite-c1", "spline-c2")
DEGREE = {"lagrange-p1": 1, "lagrange-p2": 2, "hermite-c1": 3, "spline-c2": 3}
DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TimePartition:
    t_nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.t_nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("a partition needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("partition nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "t_nodes", nodes)

    @property
    def element_widths(self) -> np.ndarray:
        return np.diff(self.t_nodes)

    @property
    def n_elements(self) -> int:
        return self.t_nodes.size - 1

    @property
    def t_start(self) -> float:
        return float(self.t_nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.t_nodes[-1])

    def locate(self, t):
        """Element index for each ``t``: left element at interfaces, first element at ``t_0``."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.t_start, self.t_end
        tol = DOMAIN_TOL * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise OutOfDomain(f"time outside [{lo}, {hi}]")
        t = np.clip(t, lo, hi)
        m = np.searchsorted(self.t_nodes, t, side="left") - 1
        return np.clip(m, 0, self.n_elements - 1), t

    def same_as(self, other: "TimePartition") -> bool:
        return self.t_nodes.shape == other.t_nodes.shape and np.array_equal(self.t_nodes, other.t_nodes)


def build_partition(t_start: float, t_end: float, n_elements: int) -> TimePartition:
    """Uniform partition of ``[t_start, t_end]`` into ``n_elements`` elements."""
    if not np.isfinite(t_start) or not np.isfinite(t_end) or t_end <= t_start:
        raise InvalidArgument(f"need t_end > t_start, got [{t_start}, {t_end}]")
    if int(n_elements) != n_elements or n_elements < 1:
        raise InvalidArgument(f"need at least one element, got {n_elements}")
    return TimePartition(np.linspace(t_start, t_end, int(n_elements) + 1))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval ``[0, 1]``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size


def gauss_rule(K: int) -> QuadratureRule:
    if int(K) != K or not 1 <= K <= 16:
        raise InvalidArgument(f"Gauss rule size must be in 1..16, got {K}")
    x, w = np.polynomial.legendre.leggauss(int(K))
    nodes, weights = 0.5 * (x + 1.0), 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights)


# -- per-family local data --------------------------------------------------

def _lagrange_p1(M):
    coef = np.array([[1.0, -1.0], [0.0, 1.0]])
    dofs = np.stack([np.arange(M), np.arange(M) + 1], axis=1)
    return dofs, np.broadcast_to(coef, (M, 2, 2)).copy(), M


def _lagrange_p2(M):
    # 2(xi-1/2)(xi-1), -4 xi (xi-1), 2 xi (xi-1/2)
    coef = np.array([[1.0, -3.0, 2.0], [0.0, 4.0, -4.0], [0.0, -1.0, 2.0]])
    dofs = np.stack([2 * np.arange(M), 2 * np.arange(M) + 1, 2 * np.arange(M) + 2], axis=1)
    return dofs, np.broadcast_to(coef, (M, 3, 3)).copy(), 2 * M


def _hermite(M, widths):
    ref = np.array([
        [1.0, 0.0, -3.0, 2.0],   # value at left node
        [0.0, 1.0, -2.0, 1.0],   # slope at left node (scaled by h below)
        [0.0, 0.0, 3.0, -2.0],   # value at right node
        [0.0, 0.0, -1.0, 1.0],   # slope at right node
    ])
    coef = np.broadcast_to(ref, (M, 4, 4)).copy()
    coef[:, 1, :] *= widths[:, None]
    coef[:, 3, :] *= widths[:, None]
    base = 2 * np.arange(M)
    dofs = np.stack([base, base + 1, base + 2, base + 3], axis=1)
    return dofs, coef, 2 * M + 1


def clamped_knots(nodes: np.ndarray, degree: int = 3) -> np.ndarray:
    return np.concatenate([np.full(degree, nodes[0]), nodes, np.full(degree, nodes[-1])])


def _bspline_nonzero(knots, span, t, p):
    """Values of the p+1 B-splines nonzero on knot span ``span`` at scalar ``t`` (Cox-de Boor)."""
    vals = np.zeros(p + 1)
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    vals[0] = 1.0
    for j in range(1, p + 1):
        left[j] = t - knots[span + 1 - j]
        right[j] = knots[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return vals


def _spline_c2(nodes):
    M = nodes.size - 1
    p = 3
    knots = clamped_knots(nodes, p)
    xi = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    vander = np.vander(xi, p + 1, increasing=True)
    coef = np.empty((M, p + 1, p + 1))
    for m in range(M):
        span = m + p
        t = nodes[m] + xi * (nodes[m + 1] - nodes[m])
        samples = np.stack([_bspline_nonzero(knots, span, tk, p) for tk in t])  # (xi, local)
        coef[m] = np.linalg.solve(vander, samples).T
    dofs = np.arange(M)[:, None] + np.arange(p + 1)[None, :]
    return dofs, coef, M + 2


@dataclass(frozen=True, eq=False)
class TimeBasis:
    partition: TimePartition
    family: str
    N: int = field(init=False)
    dofs: np.ndarray = field(init=False, repr=False)
    coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown basis family {self.family!r}; expected one of {FAMILIES}")
        M = self.partition.n_elements
        nodes = self.partition.t_nodes
        if self.family == "lagrange-p1":
            dofs, coef, N = _lagrange_p1(M)
        elif self.family == "lagrange-p2":
            dofs, coef, N = _lagrange_p2(M)
        elif self.family == "hermite-c1":
            dofs, coef, N = _hermite(M, self.partition.element_widths)
        else:
            dofs, coef, N = _spline_c2(nodes)
        dofs.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "coef", coef)

    @property
    def size(self) -> int:
        return self.N + 1

    @property
    def degree(self) -> int:
        return DEGREE[self.family]

    @property
    def is_lagrange(self) -> bool:
        return self.family.startswith("lagrange")

    def evaluate(self, t, nu: int = 0) -> np.ndarray:
        """``nu``-th time derivative of every basis function at ``t``; shape ``t.shape + (N+1,)``."""
        t = np.asarray(t, dtype=float)
        shape = t.shape
        m, tc = self.partition.locate(t.ravel())
        h = self.partition.element_widths[m]
        xi = (tc - self.partition.t_nodes[m]) / h
        c = self.coef[m]  # (n, local, p+1)
        for _ in range(nu):
            c = c[..., 1:] * np.arange(1, c.shape[-1])
        local = np.zeros(c.shape[:2])
        for k in range(c.shape[-1] - 1, -1, -1):
            local = local * xi[:, None] + c[..., k]
        local = local / h[:, None] ** nu
        out = np.zeros((t.size, self.size))
        np.put_along_axis(out, self.dofs[m], local, axis=1)
        return out.reshape(shape + (self.size,))

    def support(self, i: int) -> tuple[float, float]:
        """Time interval covered by the support of basis function ``i``."""
        elems = np.nonzero(np.any(self.dofs == i, axis=1))[0]
        nodes = self.partition.t_nodes
        return float(nodes[elems.min()]), float(nodes[elems.max() + 1])

    def support_elements(self, i: int) -> np.ndarray:
        return np.nonzero(np.any(self.dofs == i, axis=1))[0]

    def anchor_times(self) -> np.ndarray:
        """A representative time per basis function (nodes, midpoints, or Greville points)."""
        nodes = self.partition.t_nodes
        if self.family == "lagrange-p1":
            return nodes.copy()
        if self.family == "lagrange-p2":
            mids = 0.5 * (nodes[:-1] + nodes[1:])
            out = np.empty(2 * nodes.size - 1)
            out[0::2] = nodes
            out[1::2] = mids
            return out
        if self.family == "hermite-c1":
            return np.repeat(nodes, 2)
        knots = clamped_knots(nodes, 3)
        return np.array([knots[i + 1:i + 4].mean() for i in range(self.size)])

    def initial_index(self) -> int:
        """Index of the coefficient that alone sets ``u(., t_0)``."""
        return 0

    def terminal_values(self) -> np.ndarray:
        return self.evaluate(self.partition.t_end)


def make_basis(family: str, t_start: float, t_end: float, n_elements: int) -> TimeBasis:
    return TimeBasis(build_partition(t_start, t_end, n_elements), family)


def elements_for_size(family: str, N: int) -> int:
    """Number of uniform elements giving last index ``N`` for ``family``."""
    if family == "lagrange-p1":
        M = N
    elif family == "lagrange-p2":
        M = N / 2
    elif family == "hermite-c1":
        M = (N - 1) / 2
    elif family == "spline-c2":
        M = N - 2
    else:
        raise InvalidArgument(f"unknown basis family {family!r}")
    if M != int(M) or M < 1:
        raise InvalidArgument(f"N={N} is not attainable with {family}")
    return int(M)


def eval_basis(basis: TimeBasis, t):
    """Values and first derivatives of all basis functions at ``t``."""
    return basis.evaluate(t, 0), basis.evaluate(t, 1)


@dataclass(frozen=True, eq=False)
class DiscontinuousTestSpace:
    """Element-wise Legendre polynomials of degree ``< order`` (a Petrov-Galerkin test space).

    Paired with a continuous Lagrange trial space of degree ``p`` and
    ``order = p`` this is the classical continuous-Galerkin time stepping
    test space: ``M * p`` functions, one fewer than the trial space.
    """

    partition: TimePartition
    order: int
    family: str = field(init=False, default="dg-legendre")

    @property
    def size(self) -> int:
        return self.partition.n_elements * self.order

    @property
    def N(self) -> int:
        return self.size - 1

    @property
    def degree(self) -> int:
        return self.order - 1

    def evaluate(self, t, nu: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        shape = t.shape
        m, tc = self.partition.locate(t.ravel())
        h = self.partition.element_widths[m]
        y = 2.0 * (tc - self.partition.t_nodes[m]) / h - 1.0
        out = np.zeros((t.size, self.size))
        rows = np.arange(t.size)
        for k in range(self.order):
            c = np.zeros(k + 1)
            c[k] = 1.0
            c = np.polynomial.legendre.legder(c, nu) if nu else c
            out[rows, m * self.order + k] = np.polynomial.legendre.legval(y, c) * (2.0 / h) ** nu
        return out.reshape(shape + (self.size,))

    def support_elements(self, i: int) -> np.ndarray:
        return np.array([i // self.order])

    def support(self, i: int) -> tuple[float, float]:
        m = i // self.order
        nodes = self.partition.t_nodes
        return float(nodes[m]), float(nodes[m + 1])

    def anchor_times(self) -> np.ndarray:
        nodes = self.partition.t_nodes
        mids = 0.5 * (nodes[:-1] + nodes[1:])
        return np.repeat(mids, self.order)


def petrov_test_space(trial: TimeBasis) -> DiscontinuousTestSpace:
    return DiscontinuousTestSpace(trial.partition, trial.degree)
