import warnings

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fempinn import make_basis
from fempinn.adaptive import (
    DensityConfig,
    DiscreteTemporalDistribution,
    adaptive_loop,
    allocate,
    cross_entropy,
    equation_times,
    importance_weights,
    refine_training_set,
    refine_uniform,
    support_times,
    temporal_discrete_collocation,
    temporal_discrete_galerkin,
    train_density,
    write_records,
    write_samples,
)
from fempinn.density import JointDensity, TemporalSplineDensity, uniform_knots
from fempinn.fieldnet import ConstraintSpec, FieldNet, flatten_params
from fempinn.problems import make_problem
from fempinn.residual import relative_l2, uniform_training_set
from fempinn.trainer import MarchPlan, TrainConfig, train_segment


def test_collocation_masses_of_square_cdf():
    d = TemporalSplineDensity.from_weights([0.0, 1.0], [0.0, 2.0])
    dist = temporal_discrete_collocation(d, [0.25, 0.75])
    np.testing.assert_allclose(dist.masses, [0.25, 0.75], atol=1e-15)


def test_uniform_density_equal_interior_masses():
    s = np.linspace(0.1, 0.9, 9)
    dist = temporal_discrete_collocation(TemporalSplineDensity.uniform(32), s)
    np.testing.assert_allclose(dist.masses[1:-1], 0.1, atol=1e-14)
    assert dist.masses.sum() == pytest.approx(1.0, abs=1e-12)


def test_collocation_needs_increasing_times():
    with pytest.raises(Exception):
        temporal_discrete_collocation(TemporalSplineDensity.uniform(4), [0.5, 0.2])


def test_galerkin_masses(rng):
    X = rng.uniform(size=(200, 1))
    equal = temporal_discrete_galerkin(lambda X: np.ones((len(X), 4)), np.arange(4.0), X)
    np.testing.assert_allclose(equal.masses, 0.25)
    dominant = temporal_discrete_galerkin(lambda X: np.ones((len(X), 3)) * [10.0, 1.0, 1.0], np.arange(3.0), X)
    assert dominant.masses[0] > 0.97
    per_set = temporal_discrete_galerkin(lambda X: X * np.ones((1, 2)), np.arange(2.0),
                                         [np.ones((5, 1)), 3 * np.ones((5, 1))])
    np.testing.assert_allclose(per_set.masses, [0.1, 0.9])


def test_zero_residual_falls_back_to_uniform(rng):
    with pytest.warns(RuntimeWarning):
        dist = temporal_discrete_galerkin(lambda X: np.zeros((len(X), 5)), np.arange(5.0), rng.uniform(size=(9, 1)))
    np.testing.assert_allclose(dist.masses, 0.2)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30).filter(lambda v: sum(v) > 0))
def test_discrete_masses_sum_to_one(raw):
    p = np.asarray(raw) / np.sum(raw)
    dist = temporal_discrete_galerkin(lambda X: np.sqrt(np.asarray(raw))[None, :] * np.ones((len(X), 1)),
                                      np.arange(len(raw), dtype=float), np.zeros((3, 1)))
    assert abs(dist.masses.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(dist.masses, p, atol=1e-12)


@given(st.integers(0, 2000), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=25).filter(lambda v: sum(v) > 0))
def test_allocation_is_exact(total, raw):
    p = np.asarray(raw) / np.sum(raw)
    counts = allocate(total, p)
    assert counts.sum() == total
    assert np.all(np.abs(counts - total * p) < 1.0)


def test_uniform_allocation():
    np.testing.assert_array_equal(allocate(7 * 5, np.full(7, 1 / 7)), 5)


def heat_setup(projection, n_r=100, seed=0):
    prob = make_problem("heat-2d-peak", beta=200.0)
    plan = MarchPlan(1, "lagrange-p2", 2, projection)
    basis = plan.basis(0.0, 0.5)
    op = plan.operator(prob, basis)
    net = FieldNet(2, basis.size, 16, 2, ConstraintSpec("dirichlet-box", box=((0.0, 0.0), (1.0, 1.0)),
                                                        pinned=(0,), initial=prob.initial))
    data = uniform_training_set(prob, op.n_equations, n_r, np.random.default_rng(seed))
    return prob, op, net, data


@pytest.mark.parametrize("projection", ["galerkin", "collocation"])
def test_refinement_bookkeeping(projection, rng):
    prob, op, net, data = heat_setup(projection)
    model = JointDensity.for_problem(prob, n_layers=2, knots=8, hidden=8)
    params = model.init(0)
    masses = np.linspace(1.0, 2.0, op.n_equations)
    p_dis = DiscreteTemporalDistribution(equation_times(op), masses / masses.sum())
    same, pts, _ = refine_training_set(data, model, params, 0, op, p_dis, rng, prob)
    np.testing.assert_array_equal(same.set_sizes(), data.set_sizes())
    refined, pts, times = refine_training_set(data, model, params, 37, op, p_dis, rng, prob)
    assert (refined.set_sizes() - data.set_sizes()).sum() == 37
    assert sum(len(p) for p in pts) == 37
    assert np.all(prob.contains(np.concatenate(pts)))
    np.testing.assert_allclose(refined.weights, p_dis.masses, atol=1e-15)
    for j in range(data.n_sets):
        old = data.interior(j)
        np.testing.assert_array_equal(refined.interior(j)[:len(old)], old)
    if projection == "galerkin":
        for i, t in enumerate(times):
            lo, hi = op.system.test.support(i)
            assert np.all((t >= lo) & (t <= hi))
    else:
        for i, t in enumerate(times):
            np.testing.assert_array_equal(t, equation_times(op)[i])


def test_galerkin_uniform_allocation(rng):
    prob, op, net, data = heat_setup("galerkin")
    model = JointDensity.for_problem(prob, n_layers=1, knots=4, hidden=4)
    n = op.n_equations
    p_dis = DiscreteTemporalDistribution(equation_times(op), np.full(n, 1.0 / n))
    refined, _, _ = refine_training_set(data, model, model.init(0), 3 * n, op, p_dis, rng, prob)
    np.testing.assert_array_equal(refined.set_sizes() - data.set_sizes(), 3)


def test_support_times_lie_in_support():
    prob, op, net, data = heat_setup("galerkin")
    for i in range(op.n_equations):
        lo, hi = op.system.test.support(i)
        t = support_times(op, i)
        assert np.all((t > lo) & (t < hi))


def test_uniform_refinement_keeps_weights(rng):
    prob, op, net, data = heat_setup("collocation")
    refined, pts, _ = refine_uniform(data, 50, op, rng, prob)
    assert refined.set_sizes().sum() - data.set_sizes().sum() == 50
    np.testing.assert_array_equal(refined.weights, data.weights)


def uniform_grid_batch(model, n_x=16, n_t=32):
    """Midpoint tensor grid aligned with the spline knots."""
    g = (np.arange(n_x) + 0.5) / n_x
    s = (np.arange(n_t) + 0.5) / n_t
    X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    Xs = np.repeat(X, n_t, 0)
    t = np.tile(s, len(X)) * 0.5
    return Xs, t


def test_uniform_target_is_stationary():
    prob = make_problem("heat-2d-peak")
    model = JointDensity.for_problem(prob, n_layers=2, knots=8, hidden=8)
    params = model.init(0)
    X, t = uniform_grid_batch(model)
    grads = jax.grad(lambda p: cross_entropy(model, p, X, t, jnp.ones(len(t))))(params)
    assert max(float(jnp.max(jnp.abs(g))) for g in jax.tree_util.tree_leaves(grads)) < 1e-12


def test_cross_entropy_gradient_is_homogeneous(rng):
    prob = make_problem("heat-2d-peak")
    model = JointDensity.for_problem(prob, n_layers=2, knots=8, hidden=8)
    params = model.init(1)
    X = rng.uniform(size=(64, 2))
    t = rng.uniform(0, 0.5, 64)
    r2 = rng.uniform(size=64)
    g1 = jax.grad(lambda p: cross_entropy(model, p, X, t, jnp.asarray(r2)))(params)
    g2 = jax.grad(lambda p: cross_entropy(model, p, X, t, jnp.asarray(2 * r2)))(params)
    for a, b in zip(jax.tree_util.tree_leaves(g1), jax.tree_util.tree_leaves(g2)):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)
    w1, _ = importance_weights(r2, np.zeros(64))
    w2, _ = importance_weights(2 * r2, np.zeros(64))
    np.testing.assert_allclose(w1, w2, rtol=1e-14)


def test_importance_weights_drop_underflow():
    w, dropped = importance_weights(np.ones(4), np.array([0.0, -800.0, -np.inf, 1.0]))
    assert dropped == 2
    assert w[1] == 0.0 and w[2] == 0.0
    assert w.mean() == pytest.approx(1.0)


def test_synthetic_target_concentrates():
    prob = make_problem("convection")
    model = JointDensity.for_problem(prob, n_layers=2)
    config = DensityConfig(epochs=500, lr=1e-2, n_layers=2)
    params, _, losses, dropped = train_density(model, model.init(0), None,
                                               lambda X, t: np.exp(-200 * (t - 0.7) ** 2), prob, config,
                                               np.random.default_rng(0))
    d = model.temporal(params)
    assert float(d.cdf(0.8) - d.cdf(0.6)) > 0.5
    assert losses[-1] < losses[0]
    assert dropped == 0


def run_loop(n_adaptive, n_new, strategy="adaptive", iterations=60):
    prob, op, net, data = heat_setup("collocation", n_r=80)
    train = TrainConfig(iterations=iterations)
    density = DensityConfig(epochs=5, pool_size=300, batch_size=100, n_layers=1, knots=8, hidden=8)
    X = prob.sample_interior(np.random.default_rng(3), 50)
    T = np.linspace(0, 0.5, 5)
    exact = np.asarray(prob.exact(X[:, None, :], T[None, :]))

    def evaluate(params):
        return relative_l2(np.asarray(net.values(params, X)) @ op.basis.evaluate(T).T, exact)

    return prob, op, net, data, adaptive_loop(prob, op, net, net.init(0), data, train, density, n_adaptive,
                                              n_new, np.random.default_rng(4), evaluate, strategy=strategy)


def test_single_iteration_equals_plain_training():
    prob, op, net, data, result = run_loop(1, 30)
    plain = train_segment(op, net, net.init(0), data, TrainConfig(iterations=60), np.random.default_rng(4))
    np.testing.assert_array_equal(flatten_params(result.params), flatten_params(plain.params))
    assert len(result.records) == 1 and not result.samples


@pytest.mark.parametrize("strategy", ["adaptive", "uniform"])
def test_loop_grows_sets(strategy, tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prob, op, net, data, result = run_loop(3, 20, strategy, iterations=20)
    sizes = [r.set_sizes.sum() for r in result.records]
    assert sizes == [data.set_sizes().sum() + 20 * k for k in range(3)]
    assert result.data.set_sizes().sum() == sizes[-1]  # no refinement after the last solve
    assert all(np.isfinite(r.error) for r in result.records)
    assert len(result.samples) == 2
    for r in result.records:
        assert abs(r.weights.sum() - 1.0) < 1e-12
    write_records(tmp_path / "errors.csv", result.records)
    lines = (tmp_path / "errors.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[0].startswith("iteration,relative_l2")
    X, t, logd = result.samples[0]
    write_samples(tmp_path / "samples.csv", X, t, logd)
    assert (tmp_path / "samples.csv").read_text().splitlines()[0] == "x1,x2,t,logdensity"


def test_loop_rejects_bad_arguments():
    with pytest.raises(Exception):
        run_loop(0, 10)
    with pytest.raises(Exception):
        run_loop(1, 10, strategy="greedy")
