import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kindiff.chain import (
    apply_generator,
    build_chain,
    derive_rng,
    is_reversible,
    ou_filter_step,
    resolvent,
    sample_path,
    sample_stationary_filter,
    spectral_gap,
)
from kindiff.errors import AdmissibilityError
from kindiff.grid import Grid, GridField

from util import random_irreducible_chain, random_reversible_chain, two_state_closed_form

TOL = 1e-12


@pytest.fixture
def grid():
    return Grid(1, 64)


@pytest.fixture
def two_state(grid):
    chain, _, _ = two_state_closed_form(grid, delta=1e-3, q=0.5)
    return chain


def test_symmetric_two_state_build(two_state):
    assert np.allclose(two_state.stationary, [0.5, 0.5], atol=TOL)
    assert two_state.radius == pytest.approx(1e-3 * (2 * np.pi) ** 3, rel=1e-9)
    assert is_reversible(two_state)
    assert spectral_gap(two_state) == pytest.approx(1.0, abs=1e-12)


def test_non_centred_states_rejected(grid):
    x = grid.axis_coordinates()
    n = GridField(grid, 1e-4 * np.sin(2 * np.pi * x))
    with pytest.raises(AdmissibilityError, match="mcentred"):
        build_chain([n, n], [[-1.0, 1.0], [1.0, -1.0]], alpha=1.0)


def test_radius_too_large_rejected(grid):
    x = grid.axis_coordinates()
    n = GridField(grid, 0.1 * np.sin(2 * np.pi * x))  # c3 norm ~ 24.8 >> 1/4
    with pytest.raises(AdmissibilityError, match="Rsmall"):
        build_chain([n, GridField(grid, -n.values)], [[-1.0, 1.0], [1.0, -1.0]], alpha=1.0)


def test_reducible_chain_rejected(grid):
    z = GridField.zeros(grid)
    rates = np.zeros((2, 2))  # two absorbing states, no communication
    with pytest.raises(AdmissibilityError):
        build_chain([z, z], rates, alpha=1.0)


def test_bad_rate_matrix_rejected(grid):
    z = GridField.zeros(grid)
    with pytest.raises(AdmissibilityError, match="rates"):
        build_chain([z, z], [[-1.0, 0.5], [1.0, -1.0]], alpha=1.0)  # rows do not sum to 0
    with pytest.raises(AdmissibilityError, match="rates"):
        build_chain([z, z], [[1.0, -1.0], [-1.0, 1.0]], alpha=1.0)  # negative off-diagonal


def test_random_reversible_chain_detailed_balance():
    grid = Grid(1, 32)
    rng = np.random.default_rng(5)
    chain = random_reversible_chain(grid, rng, n_states=5)
    assert is_reversible(chain)
    flow = chain.stationary[:, None] * chain.rates
    assert np.max(np.abs(flow - flow.T)) < TOL


def test_cycle_chain_not_reversible(grid):
    z = GridField.zeros(grid)
    rates = np.array(
        [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]]
    )
    chain = build_chain([z, z, z], rates, alpha=1.0)
    assert np.allclose(chain.stationary, np.full(3, 1 / 3), atol=TOL)
    assert not is_reversible(chain)


def test_single_state_chain(grid):
    chain = build_chain([GridField.zeros(grid)], [[0.0]], alpha=1.0)
    assert is_reversible(chain)
    assert math.isinf(spectral_gap(chain))
    path = sample_path(chain, 10.0, derive_rng(0))
    assert len(path.jump_times) == 0


def test_sample_path_reproducible(two_state):
    p1 = sample_path(two_state, 25.0, derive_rng(123))
    p2 = sample_path(two_state, 25.0, derive_rng(123))
    assert np.array_equal(p1.jump_times, p2.jump_times)
    assert np.array_equal(p1.state_indices, p2.state_indices)


def test_holding_time_statistics(two_state):
    # mean holding time of the symmetric two-state chain is 1/q; use the
    # first 1e5 complete holds of one long path (no truncation bias)
    n_holds = 100_000
    path = sample_path(two_state, 2.1 * n_holds * 2.0, derive_rng(7))
    assert len(path.jump_times) > n_holds
    edges = np.concatenate(([0.0], path.jump_times[: n_holds + 1]))
    holds = np.diff(edges)
    q = 0.5
    se = holds.std(ddof=1) / math.sqrt(len(holds))
    assert abs(holds.mean() - 1.0 / q) < 3 * se


def test_occupation_fractions_match_stationary():
    grid = Grid(1, 32)
    rng = np.random.default_rng(11)
    chain = random_reversible_chain(grid, rng, n_states=3)
    path = sample_path(chain, 30_000.0, derive_rng(13))
    occ = np.zeros(chain.n_states)
    for t0, t1, idx in path.segments():
        occ[idx] += t1 - t0
    occ /= occ.sum()
    # generous: ergodic-average flutter at this horizon
    assert np.max(np.abs(occ - chain.stationary)) < 0.02


def test_stationary_start_distribution(two_state):
    counts = np.zeros(2)
    n = 100_000
    draws = derive_rng(17).choice(2, p=two_state.stationary, size=n)
    counts = np.bincount(draws, minlength=2)
    # chi-square with 1 dof; p > 0.001 threshold is chi2 < 10.83
    expected = n * two_state.stationary
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 10.83


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), alpha_res=st.sampled_from([0.1, 1.0, 10.0]))
def test_resolvent_identity(seed, alpha_res):
    grid = Grid(1, 16)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    chain = random_irreducible_chain(grid, rng, n_states=n)
    theta = rng.standard_normal((n, 3))
    sol = resolvent(chain, alpha_res, theta)
    back = alpha_res * sol - np.einsum("ij,j...->i...", chain.rates, sol)
    assert np.max(np.abs(back - theta)) < 1e-12 * max(1.0, np.max(np.abs(theta)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_resolvent_formula_r0_r1(seed):
    grid = Grid(1, 16)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    chain = random_irreducible_chain(grid, rng, n_states=n)
    theta = rng.standard_normal(n)
    theta -= chain.stationary @ theta  # centred
    r1 = resolvent(chain, 1.0, theta)
    r0r1 = resolvent(chain, 0.0, r1)
    direct = resolvent(chain, 0.0, theta) - r1
    assert np.max(np.abs(r0r1 - direct)) < 1e-10


def test_two_state_resolvent_closed_form(two_state):
    theta = np.array([2.0, -2.0])
    q = 0.5
    assert np.allclose(resolvent(two_state, 1.0, theta), theta / (1 + 2 * q), atol=TOL)
    assert np.allclose(resolvent(two_state, 0.0, theta), theta / (2 * q), atol=TOL)


def test_resolvent_constant_over_states(two_state):
    theta = np.full(2, 3.3)
    assert np.allclose(resolvent(two_state, 2.0, theta), theta / 2.0, atol=TOL)


def test_resolvent_zero_requires_centred(two_state):
    with pytest.raises(ValueError):
        resolvent(two_state, 0.0, np.array([1.0, 0.5]))


def test_generator_kills_constants(two_state):
    out = apply_generator(two_state, np.full(2, 4.2))
    assert np.max(np.abs(out)) < TOL


def test_generator_resolvent_inverse(two_state):
    rng = np.random.default_rng(2)
    theta = rng.standard_normal(2)
    r1 = resolvent(two_state, 1.0, theta)
    assert np.allclose(r1 - apply_generator(two_state, r1), theta, atol=1e-12)


def test_generator_two_state_closed_form(two_state):
    phi = np.array([1.5, -1.5])
    out = apply_generator(two_state, phi)
    q = 0.5
    assert np.allclose(out, [-2 * q * 1.5, 2 * q * 1.5], atol=TOL)


def test_generator_stationary_mean_zero():
    grid = Grid(1, 16)
    rng = np.random.default_rng(21)
    chain = random_irreducible_chain(grid, rng, n_states=5)
    phi = rng.standard_normal(5)
    out = apply_generator(chain, phi)
    assert abs(chain.stationary @ out) < 1e-12


def test_ou_filter_closed_form():
    w = np.zeros(4)
    m = np.full(4, 2.0)
    out = ou_filter_step(w, m, math.log(2.0))
    assert np.allclose(out, 1.0, atol=1e-14)
    assert np.array_equal(ou_filter_step(w, m, 0.0), w)
    assert np.allclose(ou_filter_step(w, m, np.inf), m)


@settings(max_examples=20, deadline=None)
@given(dt1=st.floats(0.0, 5.0), dt2=st.floats(0.0, 5.0), seed=st.integers(0, 1000))
def test_ou_filter_composes(dt1, dt2, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(8)
    m = rng.standard_normal(8)
    two = ou_filter_step(ou_filter_step(w, m, dt1), m, dt2)
    one = ou_filter_step(w, m, dt1 + dt2)
    assert np.max(np.abs(two - one)) < 1e-12


def test_stationary_filter_within_ball(two_state):
    rng = derive_rng(31)
    coeffs, w, idx = sample_stationary_filter(two_state, rng)
    # the filter is an exponential average of states, so it stays in the ball
    from kindiff.grid import c3_norm

    assert c3_norm(two_state.grid, w) <= two_state.radius + 1e-12
    assert idx in (0, 1)
    assert abs(coeffs.sum()) < 1.0 + 1e-9
