import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kindiff.grid import (
    Grid,
    GridField,
    c3_norm,
    divergence,
    field_from_modes,
    gradient,
    l2_inner,
    l2_norm,
    spectral_shift,
    vector_gradient,
)

from util import random_band_field


@pytest.fixture
def grid():
    return Grid(1, 64)


def test_grid_rejects_bad_resolution():
    with pytest.raises(ValueError):
        Grid(1, 48)
    with pytest.raises(ValueError):
        Grid(1, 2)
    with pytest.raises(ValueError):
        Grid(3, 64)


def test_gradient_matches_analytic_derivative(grid):
    x = grid.axis_coordinates()
    f = np.sin(2 * np.pi * x)
    g = gradient(grid, f)
    assert np.max(np.abs(g[0] - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-12


def test_gradient_divergence_2d():
    grid = Grid(2, 32)
    xx, yy = grid.coordinate_mesh()
    f = np.sin(2 * np.pi * xx) * np.cos(4 * np.pi * yy)
    g = gradient(grid, f)
    assert np.allclose(g[0], 2 * np.pi * np.cos(2 * np.pi * xx) * np.cos(4 * np.pi * yy), atol=1e-11)
    assert np.allclose(g[1], -4 * np.pi * np.sin(2 * np.pi * xx) * np.sin(4 * np.pi * yy), atol=1e-11)
    lap = divergence(grid, g)
    assert np.allclose(lap, -(4 + 16) * np.pi**2 * f, atol=1e-9)


def test_vector_gradient_entries():
    grid = Grid(2, 16)
    xx, yy = grid.coordinate_mesh()
    vec = np.stack([np.sin(2 * np.pi * yy), np.cos(2 * np.pi * xx)])
    vg = vector_gradient(grid, vec)
    # [a, b] entry is d_a (component b)
    assert np.allclose(vg[0, 1], -2 * np.pi * np.sin(2 * np.pi * xx), atol=1e-11)
    assert np.allclose(vg[1, 0], 2 * np.pi * np.cos(2 * np.pi * yy), atol=1e-11)


def test_shift_zero_is_identity_exactly(grid):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(grid.shape)
    assert np.array_equal(spectral_shift(grid, f, 0.0), f)


def test_shift_matches_analytic_translation(grid):
    x = grid.axis_coordinates()
    f = np.sin(2 * np.pi * x) + 0.2 * np.cos(6 * np.pi * x)
    s = 0.1234
    expected = np.sin(2 * np.pi * (x - s)) + 0.2 * np.cos(6 * np.pi * (x - s))
    assert np.max(np.abs(spectral_shift(grid, f, s) - expected)) < 1e-12


def test_single_mode_shift_quarter_period(grid):
    # one full mode shifted by a quarter period picks up a 90-degree phase
    x = grid.axis_coordinates()
    f = np.cos(2 * np.pi * x)
    out = spectral_shift(grid, f, 0.25)
    assert np.max(np.abs(out - np.sin(2 * np.pi * x))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), s1=st.floats(-1.5, 1.5), s2=st.floats(-1.5, 1.5))
def test_shift_properties(seed, s1, s2):
    grid = Grid(1, 64)
    rng = np.random.default_rng(seed)
    f = random_band_field(grid, rng, band=8) + rng.normal()
    shifted = spectral_shift(grid, f, s1)
    # norm and mean preserved
    assert abs(l2_norm(grid, shifted) - l2_norm(grid, f)) < 1e-12 * max(1, l2_norm(grid, f))
    assert abs(np.mean(shifted) - np.mean(f)) < 1e-12
    # shifts compose additively
    twice = spectral_shift(grid, shifted, s2)
    direct = spectral_shift(grid, f, s1 + s2)
    assert np.max(np.abs(twice - direct)) < 1e-11


def test_shift_2d_displacement():
    grid = Grid(2, 32)
    xx, yy = grid.coordinate_mesh()
    f = np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
    out = spectral_shift(grid, f, (0.25, 0.5))
    expected = np.sin(2 * np.pi * (xx - 0.25)) * np.cos(2 * np.pi * (yy - 0.5))
    assert np.max(np.abs(out - expected)) < 1e-12


def test_l2_inner_normalization(grid):
    ones = np.ones(grid.shape)
    assert l2_inner(grid, ones, ones) == pytest.approx(1.0, abs=1e-15)
    g2 = Grid(2, 16)
    assert l2_inner(g2, np.ones(g2.shape), np.ones(g2.shape)) == pytest.approx(1.0, abs=1e-15)


def test_c3_norm_of_single_mode(grid):
    x = grid.axis_coordinates()
    f = np.sin(2 * np.pi * x)
    # third derivative dominates: (2 pi)^3
    assert c3_norm(grid, f) == pytest.approx((2 * np.pi) ** 3, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(-8.0, 8.0))
def test_c3_norm_homogeneous(seed, scale):
    grid = Grid(1, 64)
    rng = np.random.default_rng(seed)
    f = random_band_field(grid, rng, band=4)
    n0 = c3_norm(grid, f)
    assert c3_norm(grid, scale * f) == pytest.approx(abs(scale) * n0, rel=1e-12, abs=1e-12)


def test_c3_norm_zero_only_for_zero(grid):
    assert c3_norm(grid, np.zeros(grid.shape)) == 0.0
    assert c3_norm(grid, 1e-9 * np.ones(grid.shape)) > 0.0


def test_c3_norm_2d_dominates_directional_derivative():
    grid = Grid(2, 32)
    rng = np.random.default_rng(3)
    f = random_band_field(grid, rng, band=2)
    g = gradient(grid, f)
    # |v . grad f| <= c3_norm for any unit v
    v = np.array([0.6, 0.8])
    assert np.max(np.abs(v[0] * g[0] + v[1] * g[1])) <= c3_norm(grid, f) + 1e-12


def test_non_finite_rejected(grid):
    bad = np.full(grid.shape, np.nan)
    with pytest.raises(ValueError):
        gradient(grid, bad)
    with pytest.raises(ValueError):
        spectral_shift(grid, bad, 0.1)
    with pytest.raises(ValueError):
        GridField(grid, bad)


def test_gridfield_immutable(grid):
    f = GridField(grid, np.ones(grid.shape))
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_field_from_modes_band_check(grid):
    field_from_modes(grid, {"4": [1.0, 0.0]})
    with pytest.raises(ValueError):
        field_from_modes(grid, {"33": [1.0, 0.0]})


def test_field_from_modes_values(grid):
    x = grid.axis_coordinates()
    f = field_from_modes(grid, {"0": 2.0, "2": [0.5, -1.0]})
    expected = 2.0 + 0.5 * np.cos(4 * np.pi * x) - np.sin(4 * np.pi * x)
    assert np.max(np.abs(f - expected)) < 1e-14
