import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kindiff.errors import AdmissibilityError
from kindiff.velocity import (
    density_of,
    make_velocity_model,
    moments,
    relaxation,
    ring_model,
    symmetric_speeds_model,
    two_speed_model,
)

TOL = 1e-12


def test_two_speed_model_valid():
    m = two_speed_model()
    assert m.dim == 1
    assert m.k_unit[0, 0] == pytest.approx(1.0, abs=TOL)
    assert m.k_equilibrium[0, 0] == pytest.approx(1.0, abs=TOL)


def test_asymmetric_density_rejected():
    # first moment of the density does not cancel
    with pytest.raises(AdmissibilityError, match="vdv"):
        make_velocity_model([[1.0], [-1.0]], [0.5, 0.5], [1.2, 0.8], alpha=0.8)


def test_speed_above_one_rejected():
    with pytest.raises(AdmissibilityError, match="vdv"):
        make_velocity_model([[1.5], [-1.5]], [0.5, 0.5], [1.0, 1.0], alpha=1.0)


def test_density_bound_rejected():
    with pytest.raises(AdmissibilityError, match="HypM"):
        make_velocity_model(
            [[1.0], [-1.0], [0.5], [-0.5]],
            [0.25] * 4,
            [0.1, 0.1, 1.9, 1.9],
            alpha=0.5,
        )


def test_ring_model_moment_sums():
    # eight points on the circle, even density: all five sums by direct summation
    m = ring_model(8, even_coeff=0.4)
    v, w, eq = m.velocities, m.weights, m.equilibrium
    assert abs(w.sum() - 1.0) < TOL
    assert np.max(np.abs(np.einsum("j,ja->a", w, v))) < TOL
    assert abs(np.sum(w * eq) - 1.0) < TOL
    assert np.max(np.abs(np.einsum("j,ja,j->a", w, v, eq))) < TOL
    assert np.max(np.abs(np.einsum("j,ja,jb,jc,j->abc", w, v, v, v, eq))) < TOL


def test_moments_of_equilibrium():
    m = two_speed_model()
    mo = moments(m.equilibrium, m)
    assert mo.density == pytest.approx(1.0, abs=TOL)
    assert np.max(np.abs(mo.current)) < TOL


def test_moments_of_ones():
    m = ring_model(8, even_coeff=0.2)
    mo = moments(np.ones(m.n_velocities), m)
    assert mo.density == pytest.approx(1.0, abs=TOL)
    assert np.max(np.abs(mo.current)) < TOL
    assert np.allclose(mo.second_moment, m.k_unit, atol=TOL)


def test_moments_two_speed_profile():
    # frozen from the direct summation oracle: rho = 1, J = 1, K = 1
    m = two_speed_model()
    mo = moments(np.array([2.0, 0.0]), m)
    assert mo.density == pytest.approx(1.0, abs=TOL)
    assert mo.current[0] == pytest.approx(1.0, abs=TOL)
    assert mo.second_moment[0, 0] == pytest.approx(1.0, abs=TOL)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_moments_linear(seed, a, b):
    m = ring_model(8, even_coeff=0.1)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(m.n_velocities)
    g = rng.standard_normal(m.n_velocities)
    left = moments(a * f + b * g, m)
    rf, rg = moments(f, m), moments(g, m)
    assert left.density == pytest.approx(a * rf.density + b * rg.density, abs=1e-12)
    assert np.allclose(left.current, a * rf.current + b * rg.current, atol=1e-12)
    assert np.allclose(left.second_moment, a * rf.second_moment + b * rg.second_moment, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_randomized_symmetric_models_satisfy_sums(seed):
    rng = np.random.default_rng(seed)
    n_pairs = int(rng.integers(1, 4))
    speeds = rng.uniform(0.05, 1.0, n_pairs)
    dens = rng.uniform(0.3, 2.0, n_pairs)
    m = symmetric_speeds_model(speeds, dens)
    v, w, eq = m.velocities, m.weights, m.equilibrium
    assert abs(w.sum() - 1.0) < TOL
    assert np.max(np.abs(np.einsum("j,ja->a", w, v))) < TOL
    assert abs(np.sum(w * eq) - 1.0) < TOL
    assert np.max(np.abs(np.einsum("j,ja,j->a", w, v, eq))) < TOL
    assert np.max(np.abs(np.einsum("j,ja,jb,jc,j->abc", w, v, v, v, eq))) < TOL


def test_relaxation_kills_equilibrium():
    m = two_speed_model()
    rho = 1.7
    assert np.max(np.abs(relaxation(rho * m.equilibrium, m))) < TOL


def test_relaxation_of_constant():
    m = ring_model(8, even_coeff=0.3)
    c = 2.5
    out = relaxation(np.full(m.n_velocities, c), m)
    assert np.allclose(out, c * (m.equilibrium - 1.0), atol=TOL)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_relaxation_mass_cancellation(seed):
    m = ring_model(8, even_coeff=0.25)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((m.n_velocities, 8))  # x-dependent profile
    out = relaxation(f, m)
    assert np.max(np.abs(density_of(out, m))) < 1e-14 * max(1.0, np.max(np.abs(f)))


def test_moments_x_dependent_shapes():
    m = ring_model(8)
    f = np.ones((8, 4, 4))
    mo = moments(f, m)
    assert mo.density.shape == (4, 4)
    assert mo.current.shape == (2, 4, 4)
    assert mo.second_moment.shape == (2, 2, 4, 4)
