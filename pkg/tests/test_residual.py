import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fempinn import DegenerateMetric, InvalidArgument, assemble_galerkin, build_collocation, make_basis
from fempinn.fieldnet import ConstraintSpec, FieldNet
from fempinn.problems import PROBLEMS, make_problem
from fempinn.residual import (
    ExactField,
    NetField,
    TrainingSet,
    collocation_residual,
    empirical_loss,
    galerkin_residual,
    interp_residual,
    relative_l2,
    residual_operator,
    uniform_training_set,
)

SMALL = {"parabolic-varcoef": {"dim": 3}, "allen-cahn-ball": {"dim": 3}}


def problem(name, **kw):
    return make_problem(name, **{**SMALL.get(name, {}), **kw})


def oracle_cases():
    for name in PROBLEMS:
        for k in range(len(problem(name).oracles)):
            yield name, k


def sample(prob, rng, n):
    return prob.sample_interior(rng, n)


@pytest.mark.parametrize("name,k", list(oracle_cases()))
def test_manufactured_interp_residual(name, k, rng):
    prob = problem(name)
    field = ExactField(prob.oracles[k])
    X = sample(prob, rng, 100)
    s = rng.uniform(prob.t_start, prob.t_end, 100)
    assert np.max(np.abs(interp_residual(prob, field, X, s))) < 1e-8


@pytest.mark.parametrize("name,k", list(oracle_cases()))
def test_manufactured_projected_residuals(name, k, rng):
    prob = problem(name)
    field = ExactField(prob.oracles[k])
    basis = make_basis("lagrange-p2", prob.t_start, prob.t_end, 4)
    X = sample(prob, rng, 20)
    q = prob.nonlinearity_degree
    rg = galerkin_residual(prob, assemble_galerkin(basis, nonlinearity_degree=q), field, X, fast=False)
    rc = collocation_residual(prob, build_collocation(basis), field, X)
    assert np.max(np.abs(rg)) < 1e-8
    assert np.max(np.abs(rc)) < 1e-8


def test_heat_peak_collocation_oracle(rng):
    prob = make_problem("heat-2d-peak", beta=200.0)
    grid = build_collocation(make_basis("spline-c2", 0.0, 0.5, 17))
    r = collocation_residual(prob, grid, ExactField(prob.exact), sample(prob, rng, 50))
    assert np.max(np.abs(r)) < 1e-8


def test_convection_oracle_through_galerkin(rng):
    prob = make_problem("convection", beta=10.0)
    system = assemble_galerkin(make_basis("lagrange-p2", 0, 1, 8))
    r = galerkin_residual(prob, system, ExactField(prob.exact), sample(prob, rng, 30), fast=False)
    assert np.max(np.abs(r)) < 1e-10


def small_field(prob, basis, seed=0, constraint=ConstraintSpec()):
    net = FieldNet(prob.dim, basis.size, 12, 2, constraint)
    return NetField(net, net.init(seed), basis)


def zero_field(prob, basis):
    field = small_field(prob, basis)
    params = field.params._replace(out=jnp.zeros_like(field.params.out))
    return NetField(field.net, params, basis)


def test_zero_net_zero_source(rng):
    prob = make_problem("convection")
    basis = make_basis("lagrange-p1", 0, 1, 3)
    field = zero_field(prob, basis)
    X = sample(prob, rng, 10)
    np.testing.assert_array_equal(galerkin_residual(prob, assemble_galerkin(basis), field, X), 0.0)
    np.testing.assert_array_equal(collocation_residual(prob, build_collocation(basis), field, X), 0.0)
    np.testing.assert_array_equal(interp_residual(prob, field, X, rng.uniform(0, 1, 10)), 0.0)


@pytest.mark.parametrize("name", ["convection", "parabolic-varcoef", "heat-2d-peak"])
def test_fast_path_matches_generic(name, rng):
    prob = problem(name)
    basis = make_basis("lagrange-p2", prob.t_start, prob.t_end, 3)
    system = assemble_galerkin(basis)
    field = small_field(prob, basis, 3)
    X = sample(prob, rng, 25)
    fast = np.asarray(galerkin_residual(prob, system, field, X, fast=True))
    slow = np.asarray(galerkin_residual(prob, system, field, X, fast=False))
    np.testing.assert_allclose(fast, slow, atol=1e-11 * max(1.0, np.max(np.abs(slow))))


def test_fast_path_rejected_for_nonlinear():
    prob = make_problem("allen-cahn-1d")
    with pytest.raises(InvalidArgument):
        residual_operator(prob, assemble_galerkin(make_basis("lagrange-p1", 0, 1, 2)), fast=True)


@pytest.mark.parametrize("name", ["convection", "heat-2d-peak"])
@pytest.mark.parametrize("projection", ["galerkin", "collocation"])
def test_residual_is_affine_in_outputs(name, projection, rng):
    prob = problem(name)
    basis = make_basis("lagrange-p2", prob.t_start, prob.t_end, 3)
    system = assemble_galerkin(basis) if projection == "galerkin" else build_collocation(basis)
    op = residual_operator(prob, system)
    field = small_field(prob, basis, 4)
    X = sample(prob, rng, 15)
    zero = np.asarray(op.residual(zero_field(prob, basis), X))  # equals -F
    alpha = 2.5
    scaled = NetField(field.net, field.params._replace(out=alpha * field.params.out), basis)
    lhs = np.asarray(op.residual(scaled, X)) - zero
    rhs = alpha * (np.asarray(op.residual(field, X)) - zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.max(np.abs(rhs))))


def test_allen_cahn_galerkin_matches_brute_force_quadrature(rng):
    prob = make_problem("allen-cahn-1d")
    basis = make_basis("lagrange-p2", 0.0, 1.0, 3)
    system = assemble_galerkin(basis, nonlinearity_degree=3)
    field = small_field(prob, basis, 9)
    X = sample(prob, rng, 12)
    r = np.asarray(galerkin_residual(prob, system, field, X))
    x64, w64 = np.polynomial.legendre.leggauss(64)
    ref = np.zeros_like(r)
    nodes = basis.partition.t_nodes
    for a, b in zip(nodes[:-1], nodes[1:]):
        t = 0.5 * (b - a) * (x64 + 1) + a
        w = 0.5 * (b - a) * w64
        R = np.asarray(interp_residual(prob, field, np.repeat(X, t.size, 0), np.tile(t, len(X))))
        ref += (R.reshape(len(X), t.size) * w) @ basis.evaluate(t)
    np.testing.assert_allclose(r, ref, atol=1e-10)


def test_interp_matches_collocation_at_grid_times(rng):
    prob = make_problem("allen-cahn-1d")
    basis = make_basis("spline-c2", 0, 1, 4)
    grid = build_collocation(basis)
    field = small_field(prob, basis, 2)
    X = sample(prob, rng, 5)
    rc = np.asarray(collocation_residual(prob, grid, field, X))
    for j, s in enumerate(grid.times):
        np.testing.assert_allclose(interp_residual(prob, field, X, np.full(5, s)), rc[:, j], atol=1e-13)


def test_field_basis_mismatch(rng):
    prob = make_problem("convection")
    field = small_field(prob, make_basis("lagrange-p1", 0, 1, 3))
    system = assemble_galerkin(make_basis("lagrange-p1", 0, 1, 3))
    galerkin_residual(prob, system, field, sample(prob, rng, 2))
    other = small_field(prob, make_basis("lagrange-p2", 0, 1, 1))
    with pytest.raises(InvalidArgument):
        galerkin_residual(prob, system, other, sample(prob, rng, 2))


def test_relative_l2_examples(rng):
    exact = rng.normal(size=50)
    assert relative_l2(exact, exact) == 0.0
    assert relative_l2(2 * exact, exact) == pytest.approx(1.0)
    for n in (4, 16, 64):
        e = rng.normal(size=n)
        pred = e.copy()
        pred[0] += np.linalg.norm(e) / np.sqrt(n)
        assert relative_l2(pred, e) == pytest.approx(1 / np.sqrt(n))
    with pytest.raises(DegenerateMetric):
        relative_l2(np.ones(3), np.zeros(3))
    with pytest.raises(InvalidArgument):
        relative_l2(np.ones(3), np.ones(4))


def test_exact_field_loss_vanishes(rng):
    prob = make_problem("heat-2d-peak", beta=200.0)
    basis = make_basis("lagrange-p2", 0, 0.5, 4)
    system = assemble_galerkin(basis)
    data = uniform_training_set(prob, basis.size, 200, rng)
    assert empirical_loss(prob, system, ExactField(prob.exact), data) < 1e-12


def test_loss_invariant_under_duplication(rng):
    prob = make_problem("convection")
    basis = make_basis("lagrange-p2", 0, 1, 2)
    system = assemble_galerkin(basis)
    field = small_field(prob, basis, 5, ConstraintSpec("periodic-fourier", period=(0.0, 2 * np.pi)))
    data = uniform_training_set(prob, basis.size, 40, rng)
    twice = TrainingSet(np.concatenate([data.base, data.base]), data.extra, data.weights)
    np.testing.assert_allclose(empirical_loss(prob, system, field, data),
                               empirical_loss(prob, system, field, twice), rtol=1e-13)


def test_loss_matches_extended_precision_sum(rng):
    prob = make_problem("heat-2d-peak")
    basis = make_basis("lagrange-p2", 0, 0.5, 2)
    system = assemble_galerkin(basis)
    net = FieldNet(2, basis.size, 12, 2, ConstraintSpec("dirichlet-box", box=((0.0, 0.0), (1.0, 1.0)),
                                                        pinned=(0,), initial=prob.initial))
    field = NetField(net, net.init(1), basis)
    data = uniform_training_set(prob, basis.size, 60, rng)
    data = data.appended([rng.uniform(0, 1, (j + 1, 2)) for j in range(basis.size)])
    data = data.with_weights(np.arange(1, basis.size + 1) / np.sum(np.arange(1, basis.size + 1)))
    total = empirical_loss(prob, system, field, data)
    ref = np.longdouble(0)
    for j in range(data.n_sets):
        Xj = data.interior(j)
        r = np.asarray(galerkin_residual(prob, system, field, Xj))[:, j].astype(np.longdouble)
        ref += np.longdouble(data.weights[j]) * np.sum(r * r) / len(Xj)
    assert total == pytest.approx(float(ref), rel=1e-12)


def test_empty_set_rejected(rng):
    prob = make_problem("convection")
    with pytest.raises(InvalidArgument):
        uniform_training_set(prob, 3, 0, rng)


def test_uniform_training_set_invariants(rng):
    prob = problem("allen-cahn-ball")
    data = uniform_training_set(prob, 5, 300, rng, n_bc=20)
    assert np.all(prob.contains(data.base))
    assert np.all(prob.contains(data.bc_points))
    np.testing.assert_allclose(np.linalg.norm(data.bc_points, axis=1), 1.0)
    np.testing.assert_allclose(data.weights.sum(), 1.0, atol=1e-15)
    assert np.all(data.weights > 0)


@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_appended_sets_grow(n_sets, seed):
    rng = np.random.default_rng(seed)
    prob = make_problem("heat-2d-peak")
    data = uniform_training_set(prob, n_sets, 10, rng)
    counts = rng.integers(0, 4, n_sets)
    grown = data.appended([prob.sample_interior(rng, c) for c in counts])
    np.testing.assert_array_equal(grown.set_sizes(), 10 + counts)
    for j in range(n_sets):
        np.testing.assert_array_equal(grown.interior(j)[:10], data.interior(j)[:10])


def test_unknown_problem():
    with pytest.raises(InvalidArgument):
        make_problem("burgers")
    with pytest.raises(InvalidArgument):
        make_problem("convection", nu=1.0)
