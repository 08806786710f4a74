import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fempinn import InvalidArgument
from fempinn.density import (
    ConditionalSpatialFlow,
    JointDensity,
    TemporalSplineDensity,
    flow_forward,
    flow_inverse,
    flow_logdensity,
    flow_sample,
    spline_cdf,
    spline_cdf_inverse,
    spline_pdf,
    uniform_knots,
)
from fempinn.problems import make_problem


def random_density(seed, m=16, scale=2.0):
    rng = np.random.default_rng(seed)
    return TemporalSplineDensity(uniform_knots(m), jnp.asarray(scale * rng.normal(size=m + 1)))


def random_flow_params(flow, seed, scale=0.5):
    """Flow parameters with non-zero output layers (initialization gives the identity)."""
    rng = np.random.default_rng(seed)
    params = flow.init(seed)
    return jax.tree_util.tree_map(lambda a: a + scale * jnp.asarray(rng.normal(size=a.shape)), params)


def test_uniform_density():
    d = TemporalSplineDensity.uniform(8)
    s = np.linspace(0, 1, 11)
    np.testing.assert_allclose(spline_pdf(d, s), 1.0, atol=1e-15)
    np.testing.assert_allclose(spline_cdf(d, s), s, atol=1e-15)


def test_linear_pdf_gives_square_cdf():
    d = TemporalSplineDensity.from_weights([0.0, 1.0], [0.0, 2.0])
    s = np.linspace(0, 1, 21)
    np.testing.assert_allclose(d.pdf(s), 2 * s, atol=1e-15)
    np.testing.assert_allclose(d.cdf(s), s ** 2, atol=1e-15)
    np.testing.assert_allclose(d.cdf_inverse(s), np.sqrt(s), atol=1e-15)


def test_spline_round_trip(rng):
    d = random_density(3)
    s = rng.uniform(0, 1, 1000)
    assert np.max(np.abs(spline_cdf_inverse(d, spline_cdf(d, s)) - s)) < 1e-10
    u = rng.uniform(0, 1, 1000)
    assert np.max(np.abs(spline_cdf(d, spline_cdf_inverse(d, u)) - u)) < 1e-10


def test_spline_rejects_outside_unit_interval():
    d = TemporalSplineDensity.uniform(4)
    with pytest.raises(InvalidArgument):
        d.cdf([1.5])
    with pytest.raises(InvalidArgument):
        d.cdf_inverse([-0.1])


@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-20, 20)))
def test_spline_normalized_positive_monotone(ktilde):
    d = TemporalSplineDensity(uniform_knots(ktilde.size - 1), jnp.asarray(ktilde))
    assert d.total_mass() == pytest.approx(1.0, abs=1e-12)
    s = np.linspace(0, 1, 2001)
    assert np.all(d.pdf(s) > 0)
    F = d.cdf(s)
    assert F[0] == 0.0 and F[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(F) > 0)


def test_identity_flow():
    flow = ConditionalSpatialFlow(3, n_layers=2, knots=8, hidden=8)
    params = flow.init(0)
    X = np.random.default_rng(0).uniform(size=(20, 3))
    z, logdet = flow_forward(flow, params, X, 0.3)
    np.testing.assert_allclose(z, X, atol=1e-15)
    np.testing.assert_allclose(logdet, 0.0, atol=1e-15)


def test_flow_round_trip(rng):
    flow = ConditionalSpatialFlow(3, n_layers=4, knots=16, hidden=16)
    params = random_flow_params(flow, 1)
    X = rng.uniform(size=(200, 3))
    s = rng.uniform(size=200)
    z, _ = flow_forward(flow, params, X, s)
    assert np.all((np.asarray(z) >= 0) & (np.asarray(z) <= 1))
    assert np.max(np.abs(np.asarray(flow_inverse(flow, params, z, s)) - X)) < 1e-10


def test_flow_logdet_against_jacobian(rng):
    flow = ConditionalSpatialFlow(2, n_layers=4, knots=16, hidden=16)
    params = random_flow_params(flow, 2)
    X = rng.uniform(0.05, 0.95, (50, 2))
    s = rng.uniform(size=50)
    _, logdet = flow_forward(flow, params, X, s)
    fwd = jax.jit(lambda Y: flow.forward(params, Y, s)[0])
    h = 1e-6
    J = np.empty((50, 2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        J[:, :, k] = (np.asarray(fwd(X + e)) - np.asarray(fwd(X - e))) / (2 * h)
    ref = np.log(np.abs(np.linalg.det(J)))
    assert np.max(np.abs(np.asarray(logdet) - ref) / np.maximum(np.abs(ref), 1.0)) < 1e-6


def test_flow_is_triangular(rng):
    flow = ConditionalSpatialFlow(3, n_layers=2, knots=8, hidden=8)
    params = random_flow_params(flow, 3)
    X = rng.uniform(size=(10, 3))
    Y = X.copy()
    Y[:, 2] = rng.uniform(size=10)
    z1 = np.asarray(flow.forward(params, X, 0.5)[0])
    z2 = np.asarray(flow.forward(params, Y, 0.5)[0])
    np.testing.assert_array_equal(z1[:, :2], z2[:, :2])


def test_flow_monotone_per_coordinate():
    flow = ConditionalSpatialFlow(2, n_layers=3, knots=16, hidden=16)
    params = random_flow_params(flow, 4)
    g = np.linspace(0, 1, 501)
    X = np.stack([g, np.full_like(g, 0.3)], axis=1)
    z = np.asarray(flow.forward(params, X, 0.7)[0])
    assert np.all(np.diff(z[:, 0]) > 0)


def test_flow_normalization_monte_carlo():
    flow = ConditionalSpatialFlow(2, n_layers=4, knots=16, hidden=16)
    params = random_flow_params(flow, 5)
    X = np.random.default_rng(7).uniform(size=(100_000, 2))
    p = np.exp(np.asarray(flow_logdensity(flow, params, X, 0.4)))
    se = p.std() / np.sqrt(p.size)
    assert abs(p.mean() - 1.0) < 3 * se


def test_flow_rejects_points_outside_box():
    flow = ConditionalSpatialFlow(2, n_layers=1, knots=4, hidden=4)
    with pytest.raises(InvalidArgument):
        flow_forward(flow, flow.init(0), np.array([[0.5, 1.2]]), 0.0)
    with pytest.raises(InvalidArgument):
        flow_forward(flow, flow.init(0), np.array([[0.5, 0.5, 0.5]]), 0.0)


def test_flow_sample_is_inverse_of_uniform_draws():
    flow = ConditionalSpatialFlow(2, n_layers=2, knots=8, hidden=8)
    params = random_flow_params(flow, 6)
    X = flow_sample(flow, params, 0.2, 50, seed=11)
    Z = np.random.default_rng(11).uniform(size=(50, 2))
    np.testing.assert_allclose(X, flow.inverse(params, Z, np.full(50, 0.2)), atol=0)
    assert np.all((X >= 0) & (X <= 1))


def test_joint_density_physical_coordinates(rng):
    prob = make_problem("heat-2d-peak")
    model = JointDensity.for_problem(prob, n_layers=2, knots=8, hidden=8)
    params = model.init(0)
    X, t = model.sample(params, 100, rng)
    assert np.all(prob.contains(X))
    assert np.all((t >= 0) & (t <= 0.5))
    # the initial model is uniform on box x time: log density is minus the log volume
    np.testing.assert_allclose(model.logpdf(params, X, t), -np.log(0.5), atol=1e-13)
