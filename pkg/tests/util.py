"""Shared builders for randomized chains, models, and fields."""

import numpy as np

from kindiff.chain import build_chain, derive_rng
from kindiff.grid import Grid, GridField, c3_norm, field_from_modes
from kindiff.velocity import two_speed_model


def random_band_field(grid: Grid, rng, band: int = 3) -> np.ndarray:
    """Zero-mean band-limited field with O(1) amplitudes."""
    modes = {}
    if grid.dim == 1:
        for k in range(1, band + 1):
            modes[(k,)] = (rng.standard_normal(), rng.standard_normal())
    else:
        for kx in range(0, band + 1):
            for ky in range(-band, band + 1):
                if kx == 0 and ky <= 0:
                    continue
                modes[(kx, ky)] = (rng.standard_normal(), rng.standard_normal())
    return field_from_modes(grid, modes)


def random_reversible_chain(grid: Grid, rng, n_states: int = 4, alpha: float = 1.0,
                            band: int = 2, radius_frac: float = 0.9):
    """Detailed-balance chain with centred band-limited states inside the ball."""
    lam = rng.dirichlet(np.full(n_states, 5.0))
    sym = rng.uniform(0.2, 1.0, size=(n_states, n_states))
    sym = 0.5 * (sym + sym.T)
    rates = np.zeros((n_states, n_states))
    for i in range(n_states):
        for j in range(n_states):
            if i != j:
                rates[i, j] = sym[i, j] / lam[i]
        rates[i, i] = -rates[i].sum()
    raw = np.stack([random_band_field(grid, rng, band=band) for _ in range(n_states)])
    if n_states > 1:
        raw[-1] = -(lam[:-1] @ raw[:-1].reshape(n_states - 1, -1)).reshape(grid.shape) / lam[-1]
    else:
        raw[0] = 0.0
    radius = max(c3_norm(grid, s) for s in raw)
    if radius > 0:
        raw *= radius_frac * (alpha / 4.0) / radius
    states = [GridField(grid, s) for s in raw]
    return build_chain(states, rates, alpha)


def random_irreducible_chain(grid: Grid, rng, n_states: int = 4, alpha: float = 1.0,
                             band: int = 2, radius_frac: float = 0.9):
    """Generic (typically non-reversible) dense irreducible chain."""
    rates = rng.uniform(0.2, 1.0, size=(n_states, n_states))
    np.fill_diagonal(rates, 0.0)
    for i in range(n_states):
        rates[i, i] = -rates[i].sum()
    # stationary law for centring
    a = rates.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n_states)
    b[-1] = 1.0
    lam = np.linalg.solve(a, b)
    raw = np.stack([random_band_field(grid, rng, band=band) for _ in range(n_states)])
    raw[-1] = -(lam[:-1] @ raw[:-1].reshape(n_states - 1, -1)).reshape(grid.shape) / lam[-1]
    radius = max(c3_norm(grid, s) for s in raw)
    if radius > 0:
        raw *= radius_frac * (alpha / 4.0) / radius
    states = [GridField(grid, s) for s in raw]
    return build_chain(states, rates, alpha)


def two_state_closed_form(grid: Grid | None = None, delta: float = 1e-3, q: float = 0.5,
                          phase: float = 0.0):
    """The symmetric two-state pilot over the two-speed model.

    Returns (chain, model, c_field) where c(x) is the closed-form drift
    profile K(1) d/dx of the first state.
    """
    grid = grid or Grid(1, 64)
    x = grid.axis_coordinates()
    model = two_speed_model()
    n_vals = delta * np.sin(2 * np.pi * x + phase)
    chain = build_chain(
        [GridField(grid, n_vals), GridField(grid, -n_vals)],
        [[-q, q], [q, -q]],
        alpha=model.alpha,
    )
    c_field = 2 * np.pi * delta * np.cos(2 * np.pi * x + phase)
    return chain, model, c_field
