"""Machine checks of the perturbed-test-function algebra.

Test observables have the separating form psi(<rho, xi>).  The first
corrector has the closed form

    phi1(f, n) = psi'(<rho(f), xi>) <J(f) + rho(f) (R0 chi)(n), grad xi>,

whose Frechet derivative in f is hand-coded (phi1 is psi'(linear) times
linear).  With the chain generator acting exactly on the state slot, the
corrector equation  L_sharp phi1 + L_flat phi = 0  holds to round-off,
and the limit generator evaluates as an exact stationary sum.  The only
Monte-Carlo approximations in the module are the identities that involve
the joint law of the filter field and the chain state; each such check
reports its standard error and a z-score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import PilotChain, derive_rng, resolvent, sample_stationary_filter, spectral_gap
from .coefficients import ChainFields, LimitCoefficients
from .grid import Grid, GridField, divergence, field_from_modes, gradient, l2_inner, vector_gradient
from .velocity import VelocityModel, moments, relaxation

__all__ = [
    "PsiFunction",
    "PSI_LIBRARY",
    "TestFunctional",
    "eval_phi1",
    "phi1_direction_derivative",
    "l_flat_phi",
    "l_sharp_phi1",
    "poisson_residual",
    "verify_poisson_phi1",
    "l_flat_phi1",
    "eval_limit_generator",
    "drift_functional",
    "noise_quadratic_form",
    "IdentityCheck",
    "verify_stationarity_identities",
    "verify_centering",
    "verify_solvability",
]


@dataclass(frozen=True)
class PsiFunction:
    """Scalar map with analytic first and second derivatives."""

    name: str
    value: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


def _tanh_d1(u: float) -> float:
    t = math.tanh(u)
    return 1.0 - t * t


def _tanh_d2(u: float) -> float:
    t = math.tanh(u)
    return -2.0 * t * (1.0 - t * t)


PSI_LIBRARY: dict[str, PsiFunction] = {
    "identity": PsiFunction("identity", lambda u: u, lambda u: 1.0, lambda u: 0.0),
    "half_square": PsiFunction("half_square", lambda u: 0.5 * u * u, lambda u: u, lambda u: 1.0),
    "tanh": PsiFunction("tanh", math.tanh, _tanh_d1, _tanh_d2),
}


class TestFunctional:
    """Observable psi(<rho, xi>) with cached derivatives of the profile."""

    def __init__(self, xi: GridField | np.ndarray, psi: PsiFunction | str, grid: Grid | None = None):
        if isinstance(xi, GridField):
            self.grid = xi.grid
            self.xi = xi.values
        else:
            if grid is None:
                raise ValueError("grid is required when xi is a bare array")
            self.grid = grid
            self.xi = np.asarray(xi, dtype=float)
        self.psi = PSI_LIBRARY[psi] if isinstance(psi, str) else psi
        self.grad_xi = gradient(self.grid, self.xi)  # (d, *shape)
        self.hess_xi = vector_gradient(self.grid, self.grad_xi)  # (d, d, *shape)

    def pairing(self, rho: np.ndarray) -> float:
        return l2_inner(self.grid, rho, self.xi)

    def value(self, rho: np.ndarray) -> float:
        return self.psi.value(self.pairing(rho))


def _inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return l2_inner(grid, a, b)


def eval_phi1(
    f: np.ndarray, state_index: int, chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """First corrector at (f, n_i), exact chain resolvent in the state slot."""
    cf = fields if fields is not None else ChainFields(chain, model)
    mom = moments(f, model)
    u = test.pairing(mom.density)
    vec = mom.current + mom.density[None] * cf.r0_chi[state_index]
    return test.psi.d1(u) * _inner(test.grid, vec, test.grad_xi)


def phi1_direction_derivative(
    f: np.ndarray, direction: np.ndarray, state_index: int,
    chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """Frechet derivative D_f phi1 applied to a velocity-profile direction."""
    cf = fields if fields is not None else ChainFields(chain, model)
    mom = moments(f, model)
    mom_h = moments(direction, model)
    u = test.pairing(mom.density)
    u_h = test.pairing(mom_h.density)
    w_f = _inner(test.grid, mom.current + mom.density[None] * cf.r0_chi[state_index], test.grad_xi)
    w_h = _inner(test.grid, mom_h.current + mom_h.density[None] * cf.r0_chi[state_index], test.grad_xi)
    return test.psi.d2(u) * u_h * w_f + test.psi.d1(u) * w_h


def l_flat_phi(f: np.ndarray, model: VelocityModel, test: TestFunctional) -> float:
    """Transport part of the generator on the unperturbed observable."""
    mom = moments(f, model)
    u = test.pairing(mom.density)
    return test.psi.d1(u) * _inner(test.grid, mom.current, test.grad_xi)


def _sharp_direction(f: np.ndarray, state_index: int, chain: PilotChain, model: VelocityModel,
                     fields: ChainFields) -> np.ndarray:
    """Lf + rho(f) v . grad n_i, the fast-dynamics direction at state i."""
    grid = chain.grid
    gn = fields.grad_states[state_index]
    rho = moments(f, model).density
    vdotg = np.einsum("ja,a...->j...", model.velocities, gn)
    return relaxation(f, model) + rho[None] * vdotg


def l_sharp_phi1(
    f: np.ndarray, state_index: int, chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """Fast generator on the first corrector: chain part plus f-directional part."""
    cf = fields if fields is not None else ChainFields(chain, model)
    values = np.array([
        eval_phi1(f, j, chain, model, test, fields=cf) for j in range(chain.n_states)
    ])
    chain_part = float((chain.rates @ values)[state_index])
    direction = _sharp_direction(f, state_index, chain, model, cf)
    deriv_part = phi1_direction_derivative(f, direction, state_index, chain, model, test, fields=cf)
    return chain_part + deriv_part


def poisson_residual(
    f: np.ndarray, state_index: int, chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """Residual of the corrector equation; zero in exact arithmetic."""
    cf = fields if fields is not None else ChainFields(chain, model)
    return l_sharp_phi1(f, state_index, chain, model, test, fields=cf) + l_flat_phi(f, model, test)


def verify_poisson_phi1(
    chain: PilotChain, model: VelocityModel, tests: Sequence[TestFunctional],
    n_samples: int = 100, seed: int = 0, amplitude: float = 1.0,
) -> float:
    """Max |L_sharp phi1 + L_flat phi| over random profiles and states."""
    cf = ChainFields(chain, model)
    rng = derive_rng(seed, 7)
    grid = chain.grid
    worst = 0.0
    for k in range(n_samples):
        base = 1.0 + rng.uniform(0.0, amplitude)
        f = base * model.equilibrium.reshape((-1,) + (1,) * grid.dim) * np.ones(
            (model.n_velocities,) + grid.shape
        )
        f = f + amplitude * rng.standard_normal(f.shape)
        idx = int(rng.integers(chain.n_states))
        test = tests[k % len(tests)]
        worst = max(worst, abs(poisson_residual(f, idx, chain, model, test, fields=cf)))
    return worst


def l_flat_phi1(
    f: np.ndarray, state_index: int, chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """Transport part of the generator acting on the first corrector."""
    cf = fields if fields is not None else ChainFields(chain, model)
    grid = test.grid
    mom = moments(f, model)
    u = test.pairing(mom.density)
    r0 = cf.r0_chi[state_index]  # (d, *shape)
    grad_r0 = cf.grad_r0_chi[state_index]  # (d, d, *shape), [a, b] = d_a (R0 chi)_b
    j_pair = _inner(grid, mom.current, test.grad_xi)
    corr_pair = _inner(grid, mom.current + mom.density[None] * r0, test.grad_xi)
    term2 = test.psi.d2(u) * j_pair * corr_pair
    tensor = mom.second_moment + np.einsum("a...,b...->ab...", mom.current, r0)
    hess_term = _inner(grid, tensor, test.hess_xi)
    grad_term = _inner(grid, mom.current, np.einsum("ab...,b...->a...", grad_r0, test.grad_xi))
    return term2 + test.psi.d1(u) * (hess_term + grad_term)


def eval_limit_generator(
    rho: np.ndarray, chain: PilotChain, model: VelocityModel, test: TestFunctional,
    fields: ChainFields | None = None,
) -> float:
    """Limit generator on psi(<rho, xi>) as an exact stationary sum."""
    cf = fields if fields is not None else ChainFields(chain, model)
    grid = test.grid
    lam = chain.stationary
    u = test.pairing(rho)
    d = grid.dim

    chi_pair = np.array([_inner(grid, rho[None] * cf.chi[i], test.grad_xi) for i in range(chain.n_states)])
    r0_pair = np.array([_inner(grid, rho[None] * cf.r0_chi[i], test.grad_xi) for i in range(chain.n_states)])
    second = float(np.sum(lam * chi_pair * r0_pair))

    k_base_term = _inner(
        grid, rho, np.einsum("ab,ab...->...", model.k_equilibrium, test.hess_xi)
    )
    first = k_base_term
    for i in range(chain.n_states):
        tensor = np.einsum("a...,b...->ab...", cf.chi[i], cf.u[i])
        first += lam[i] * _inner(grid, rho, np.einsum("ab...,ab...->...", tensor, test.hess_xi))
        grad_term = np.einsum("ab...,b...->a...", cf.grad_u[i], test.grad_xi)
        first += lam[i] * _inner(grid, rho[None] * cf.chi[i], grad_term)
    return test.psi.d2(u) * second + test.psi.d1(u) * first


def drift_functional(rho: np.ndarray, coeffs: LimitCoefficients, test: TestFunctional) -> float:
    """Weak-form drift b(rho, xi) assembled from the computed coefficients.

    For the divergence-form equation with a possibly non-symmetric K*, the
    functional pairs rho against div(K*^T grad xi) - Psi . grad xi.
    """
    grid = coeffs.grid
    flux = np.einsum("ba...,b...->a...", coeffs.k_star, test.grad_xi)
    div_flux = divergence(grid, flux)
    drift_term = np.einsum("a...,a...->...", coeffs.psi, test.grad_xi)
    return l2_inner(grid, rho, div_flux - drift_term)


def noise_quadratic_form(rho: np.ndarray, coeffs: LimitCoefficients, test: TestFunctional) -> float:
    """<S (rho grad xi), rho grad xi> via the retained eigenmodes."""
    grid = coeffs.grid
    q = rho[None] * test.grad_xi
    flat = q.reshape(-1)
    proj = grid.cell_volume * (coeffs.mode_matrix() @ flat)
    return float(np.sum(coeffs.noise_eigenvalues * proj * proj))


@dataclass(frozen=True)
class IdentityCheck:
    """One Monte-Carlo vs exact comparison with its z-score."""

    name: str
    mc_mean: float
    mc_se: float
    exact: float
    n_samples: int

    @property
    def z(self) -> float:
        if self.mc_se == 0.0:
            return 0.0 if self.mc_mean == self.exact else math.inf
        return (self.mc_mean - self.exact) / self.mc_se

    def passed(self, z_max: float = 3.0) -> bool:
        return abs(self.z) <= z_max

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mc_mean": self.mc_mean,
            "mc_se": self.mc_se,
            "exact": self.exact,
            "z": self.z,
            "n_samples": self.n_samples,
        }


def _mc_summary(name: str, samples: np.ndarray, exact: float) -> IdentityCheck:
    n = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return IdentityCheck(name=name, mc_mean=mean, mc_se=se, exact=exact, n_samples=n)


def _stationary_samples(chain: PilotChain, n_samples: int, seed: int, burn_in_factor: float = 20.0):
    """Independent draws of (filter coefficients, end state index)."""
    gap = spectral_gap(chain)
    horizon = burn_in_factor / min(gap, 1.0) if math.isfinite(gap) else burn_in_factor
    coeffs = np.zeros((n_samples, chain.n_states))
    states = np.zeros(n_samples, dtype=int)
    for k in range(n_samples):
        rng = derive_rng(seed, 11, k)
        c, _, idx = sample_stationary_filter(chain, rng, horizon=horizon, gap=gap)
        coeffs[k] = c
        states[k] = idx
    return coeffs, states


def verify_stationarity_identities(
    chain: PilotChain, model: VelocityModel, test: TestFunctional,
    n_samples: int = 10_000, seed: int = 0,
    theta: np.ndarray | None = None, probe: np.ndarray | None = None,
    rho: np.ndarray | None = None,
) -> list[IdentityCheck]:
    """MC vs exact for the two stationary-correlation identities.

    The first pairs the current of the invariant profile against a
    per-state functional theta (resolvent at 1 on the exact side); the
    second is the double-exponential correlation identity for the
    quadratic term.  Both reduce to lambda-weighted resolvent sums.
    """
    cf = ChainFields(chain, model)
    grid = chain.grid
    lam = chain.stationary
    n = chain.n_states
    rng = derive_rng(seed, 13)
    if theta is None:
        theta = rng.standard_normal(n)
    if probe is None:
        probe = np.stack([grid_noise(grid, rng) for _ in range(grid.dim)])
    if rho is None:
        rho = 1.0 + 0.5 * np.cos(2.0 * np.pi * grid.coordinate_mesh()[0])

    coeffs, states = _stationary_samples(chain, n_samples, seed)
    # filter gradient contracted with K(1): J(gbar_0) per sample, paired with probes
    chi_pair_probe = np.array([_inner(grid, cf.chi[i], probe) for i in range(n)])
    chi_pair_xi = np.array([_inner(grid, rho[None] * cf.chi[i], test.grad_xi) for i in range(n)])

    r1_theta = resolvent(chain, 1.0, theta)
    r1_chi_pair = np.array([_inner(grid, rho[None] * cf.r1_chi[i], test.grad_xi) for i in range(n)])

    jd_samples = (coeffs @ chi_pair_probe) * theta[states]
    jd_exact = float(np.sum(lam * chi_pair_probe * r1_theta))
    jjd_samples = (coeffs @ chi_pair_xi) ** 2
    jjd_exact = float(np.sum(lam * chi_pair_xi * r1_chi_pair))
    return [
        _mc_summary("current-vs-resolvent", jd_samples, jd_exact),
        _mc_summary("double-exponential-correlation", jjd_samples, jjd_exact),
    ]


def grid_noise(grid: Grid, rng: np.random.Generator, band: int | None = None) -> np.ndarray:
    """Band-limited random field used as a probe."""
    if band is None:
        band = max(2, grid.resolution // 8)
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


def verify_centering(
    chain: PilotChain, model: VelocityModel, test: TestFunctional,
    rho: np.ndarray | None = None, n_samples: int = 10_000, seed: int = 0,
) -> IdentityCheck:
    """The transport generator is centred on invariant profiles (mean zero)."""
    cf = ChainFields(chain, model)
    grid = chain.grid
    if rho is None:
        rho = 1.0 + 0.5 * np.cos(2.0 * np.pi * grid.coordinate_mesh()[0])
    u = test.pairing(rho)
    coeffs, _ = _stationary_samples(chain, n_samples, seed)
    chi_pair = np.array([
        _inner(grid, rho[None] * cf.chi[i], test.grad_xi) for i in range(chain.n_states)
    ])
    samples = test.psi.d1(u) * (coeffs @ chi_pair)
    return _mc_summary("flat-generator-centred", samples, 0.0)


def verify_solvability(
    chain: PilotChain, model: VelocityModel, test: TestFunctional,
    rho: np.ndarray | None = None, n_samples: int = 4_000, seed: int = 0,
) -> IdentityCheck:
    """Second-corrector solvability: mean of L_flat phi1 on the invariant
    law equals the limit generator."""
    cf = ChainFields(chain, model)
    grid = chain.grid
    if rho is None:
        rho = 1.0 + 0.5 * np.cos(2.0 * np.pi * grid.coordinate_mesh()[0])
    exact = eval_limit_generator(rho, chain, model, test, fields=cf)
    coeffs, states = _stationary_samples(chain, n_samples, seed)
    m_prof = model.equilibrium.reshape((-1,) + (1,) * grid.dim)
    samples = np.zeros(n_samples)
    for k in range(n_samples):
        grad_w = np.einsum("i,ia...->a...", coeffs[k], cf.grad_states)
        mbar = m_prof + np.einsum("ja,a...->j...", model.velocities, grad_w)
        f = rho[None] * mbar
        samples[k] = l_flat_phi1(f, int(states[k]), chain, model, test, fields=cf)
    return _mc_summary("second-corrector-solvability", samples, exact)
