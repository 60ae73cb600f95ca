"""IMEX Euler-Maruyama solver for the limit stochastic diffusion equation.

d rho = div(K* grad rho + Psi rho) dt + sqrt(2) div(rho S^(1/2) dW).

The stiff diffusion part uses the symmetric part of K* in a conservative
flux form and is treated implicitly (one sparse factorization per solver,
since the coefficients are time-independent).  Drift, the antisymmetric
remainder of K* (present only for d = 2 non-reversible pilots), and the
noise are explicit in centered conservative form, so every term telescopes
and mass is conserved to round-off per step.  The noise sum is finite:
the covariance operator of a finite chain has rank at most the number of
chain states, so the cylindrical expansion needs no truncation beyond the
eigenvalue floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .chain import derive_rng
from .coefficients import LimitCoefficients
from .grid import Grid

__all__ = [
    "SpdeTrajectory",
    "SpdeSolver",
    "spde_step",
    "simulate_spde",
    "solve_deterministic",
]


@dataclass
class SpdeTrajectory:
    times: np.ndarray  # (R,)
    functionals: np.ndarray  # (R, n_xi)
    mass: np.ndarray  # (R,)
    rho_snapshots: np.ndarray | None
    seed: int | None = None
    h1_seminorm_max: float = 0.0  # reported, not asserted (discrete H1 boundedness)


def _shift_matrix(n: int, offset: int) -> sp.csr_matrix:
    """Periodic shift: (S x)_i = x_{i+offset}."""
    idx = (np.arange(n) + offset) % n
    return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, n))


def _centered_diff(n: int, h: float) -> sp.csr_matrix:
    return (_shift_matrix(n, 1) - _shift_matrix(n, -1)) * (0.5 / h)


def _axis_operator(mat1d: sp.spmatrix, axis: int, grid: Grid) -> sp.csr_matrix:
    """Lift a 1-d operator to the tensor grid along the given axis."""
    if grid.dim == 1:
        return sp.csr_matrix(mat1d)
    eye = sp.identity(grid.resolution, format="csr")
    if axis == 0:
        return sp.kron(mat1d, eye, format="csr")
    return sp.kron(eye, mat1d, format="csr")


def _flux_divergence_matrix(grid: Grid, kappa: np.ndarray, axis: int) -> sp.csr_matrix:
    """Conservative second-difference with face-averaged coefficient.

    Rows encode (1/h^2) [k_{+1/2} (rho_+ - rho) - k_{-1/2} (rho - rho_-)]
    along one axis; kappa is the cell-centered coefficient field.
    """
    n = grid.resolution
    h = 1.0 / n
    shift_p = _axis_operator(_shift_matrix(n, 1), axis, grid)
    shift_m = _axis_operator(_shift_matrix(n, -1), axis, grid)
    k_flat = kappa.reshape(-1)
    k_plus = 0.5 * (k_flat + shift_p @ k_flat)  # face value at +1/2
    k_minus = 0.5 * (k_flat + shift_m @ k_flat)
    dp = sp.diags(k_plus)
    dm = sp.diags(k_minus)
    eye = sp.identity(grid.n_points, format="csr")
    return (dp @ (shift_p - eye) - dm @ (eye - shift_m)) * (1.0 / h**2)


class SpdeSolver:
    """Prefactorized IMEX stepper for fixed coefficients and step size."""

    def __init__(self, coeffs: LimitCoefficients, dt: float, drift_guard: float = 1e-9):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.dt = float(dt)
        grid = self.grid
        d = grid.dim
        h = 1.0 / grid.resolution

        k_sym = 0.5 * (coeffs.k_star + np.swapaxes(coeffs.k_star, 0, 1))
        k_anti = coeffs.k_star - k_sym

        diff = sp.csr_matrix((grid.n_points, grid.n_points))
        for a in range(d):
            diff = diff + _flux_divergence_matrix(grid, k_sym[a, a], a)
        for a in range(d):
            for b in range(d):
                if a == b:
                    continue
                da = _axis_operator(_centered_diff(grid.resolution, h), a, grid)
                db = _axis_operator(_centered_diff(grid.resolution, h), b, grid)
                diff = diff + da @ sp.diags(k_sym[a, b].reshape(-1)) @ db
        self._diffusion = diff.tocsr()
        system = (sp.identity(grid.n_points, format="csc") - dt * diff).tocsc()
        try:
            self._solve = factorized(system)
        except RuntimeError as exc:  # singular factorization
            raise RuntimeError(f"implicit diffusion solve failed to factorize: {exc}") from exc

        self._grad_ops = [
            _axis_operator(_centered_diff(grid.resolution, h), a, grid) for a in range(d)
        ]
        self._k_anti = None
        if d > 1 and float(np.max(np.abs(k_anti))) > 0:
            self._k_anti = k_anti
        self._psi = coeffs.psi
        self._sqrt_2mu = np.sqrt(2.0 * coeffs.noise_eigenvalues * dt)  # per-mode noise scale
        self._modes = coeffs.noise_modes  # (rank, d, *shape)

        max_psi = float(np.max(np.abs(coeffs.psi))) if coeffs.psi.size else 0.0
        if dt > h / (2.0 * max_psi + drift_guard):
            raise ValueError(f"dt = {dt:.3g} violates the drift guard h / (2 max|Psi|)")

    def _div(self, vec: np.ndarray) -> np.ndarray:
        """Centered conservative divergence of a (d, *shape) field."""
        out = np.zeros(self.grid.n_points)
        for a, op in enumerate(self._grad_ops):
            out += op @ vec[a].reshape(-1)
        return out.reshape(self.grid.shape)

    def step(self, rho: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
        """One IMEX Euler-Maruyama step; rng None means zero noise."""
        dt = self.dt
        rhs = rho + dt * self._div(self._psi * rho[None])
        if self._k_anti is not None:
            grad = np.stack([(op @ rho.reshape(-1)).reshape(self.grid.shape) for op in self._grad_ops])
            rhs += dt * self._div(np.einsum("ab...,b...->a...", self._k_anti, grad))
        if rng is not None and self.coeffs.rank > 0:
            z = rng.standard_normal(self.coeffs.rank)
            amp = self._sqrt_2mu * z  # ~ Normal(0, 2 mu_k dt)
            noise_field = np.einsum("k,ka...->a...", amp, self._modes)
            rhs += self._div(rho[None] * noise_field)
        out = self._solve(rhs.reshape(-1))
        if not np.all(np.isfinite(out)):
            raise RuntimeError("non-finite SPDE state")
        return out.reshape(self.grid.shape)

    def run(
        self,
        rho_in: np.ndarray,
        T: float,
        rng: np.random.Generator | None,
        record_times: Sequence[float],
        xis: Sequence[np.ndarray] = (),
        store_rho: bool = False,
        seed: int | None = None,
    ) -> SpdeTrajectory:
        rec = np.asarray(record_times, dtype=float)
        n_steps = int(round(T / self.dt))
        if abs(n_steps * self.dt - T) > 1e-9 * max(T, 1.0):
            raise ValueError("T must be an integer number of steps")
        rec_steps = np.round(rec / self.dt).astype(int)
        if np.max(np.abs(rec_steps * self.dt - rec)) > 1e-9:
            raise ValueError("record times must lie on the step mesh")
        lookup = {int(s): i for i, s in enumerate(rec_steps)}

        cv = self.grid.cell_volume
        rho = np.array(rho_in, dtype=float, copy=True)
        functionals = np.zeros((len(rec), len(xis)))
        mass = np.zeros(len(rec))
        snaps = np.zeros((len(rec),) + self.grid.shape) if store_rho else None
        h1_max = 0.0

        def record(i: int):
            nonlocal h1_max
            mass[i] = cv * float(np.sum(rho))
            for m, xi in enumerate(xis):
                functionals[i, m] = cv * float(np.sum(rho * xi))
            grad_sq = sum(
                float(np.sum((op @ rho.reshape(-1)) ** 2)) for op in self._grad_ops
            )
            h1_max = max(h1_max, cv * grad_sq)
            if snaps is not None:
                snaps[i] = rho

        if 0 in lookup:
            record(lookup[0])
        for step_idx in range(1, n_steps + 1):
            rho = self.step(rho, rng)
            if step_idx in lookup:
                record(lookup[step_idx])
        return SpdeTrajectory(
            times=rec.copy(),
            functionals=functionals,
            mass=mass,
            rho_snapshots=snaps,
            seed=seed,
            h1_seminorm_max=h1_max,
        )


def spde_step(rho: np.ndarray, coeffs: LimitCoefficients, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Single-step convenience wrapper (builds and discards a solver)."""
    return SpdeSolver(coeffs, dt).step(rho, rng)


def simulate_spde(
    rho_in: np.ndarray,
    coeffs: LimitCoefficients,
    T: float,
    dt: float,
    seed: int = 0,
    record_times: Sequence[float] | None = None,
    xis: Sequence[np.ndarray] = (),
    store_rho: bool = False,
    solver: SpdeSolver | None = None,
) -> SpdeTrajectory:
    """Reproducible trajectory of the limit equation on a record mesh."""
    if record_times is None:
        record_times = np.linspace(0.0, T, 21)
    if solver is None:
        solver = SpdeSolver(coeffs, dt)
    rng = derive_rng(seed)
    return solver.run(rho_in, T, rng, record_times, xis=xis, store_rho=store_rho, seed=seed)


def _zero_noise_coeffs(coeffs: LimitCoefficients, mode: str) -> LimitCoefficients:
    from dataclasses import replace

    d = coeffs.grid.dim
    empty_vals = np.zeros(0)
    empty_modes = np.zeros((0, d) + coeffs.grid.shape)
    if mode == "mean":
        return replace(coeffs, noise_eigenvalues=empty_vals, noise_modes=empty_modes, rank=0)
    if mode == "plain":
        k_plain = np.broadcast_to(
            coeffs.k_base.reshape((d, d) + (1,) * d), (d, d) + coeffs.grid.shape
        ).copy()
        return replace(
            coeffs,
            k_star=k_plain,
            psi=np.zeros((d,) + coeffs.grid.shape),
            noise_eigenvalues=empty_vals,
            noise_modes=empty_modes,
            rank=0,
        )
    raise ValueError(f"mode must be 'plain' or 'mean', got {mode!r}")


def solve_deterministic(
    rho_in: np.ndarray,
    mode: str,
    coeffs: LimitCoefficients,
    T: float,
    dt: float,
    record_times: Sequence[float] | None = None,
    xis: Sequence[np.ndarray] = (),
    store_rho: bool = False,
) -> SpdeTrajectory:
    """Deterministic comparison equations with the same discretization.

    mode 'plain': d rho/dt = div(K(M) grad rho); mode 'mean':
    d r/dt = div(K* grad r + Psi r), the evolution of the ensemble average.
    """
    if record_times is None:
        record_times = np.linspace(0.0, T, 21)
    solver = SpdeSolver(_zero_noise_coeffs(coeffs, mode), dt)
    return solver.run(rho_in, T, None, record_times, xis=xis, store_rho=store_rho)
