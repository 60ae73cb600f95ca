"""Exact limit-equation data for a finite pilot chain.

Every expectation over the stationary pilot law is a finite weighted sum
over chain states, and the resolvents are dense solves, so the diffusion
matrix field, the drift field, the covariance kernel of the noise, and
its eigendecomposition are all computed without sampling error.

Conventions: with (a x b)_ij = a_i b_j, the Ito diffusion field is
K*(x) = K(M) + sum_i lam_i u_i(x) x chi_i(x) where u = (R0 - R1) chi, and
the equation is d rho = div(K* grad rho + Psi rho) dt + noise.  The
covariance kernel is assembled one-sided as
C_ab(x, y) = sum_i lam_i (R0 chi_a)(n_i)(x) chi_b(n_i)(y); its asymmetry
is reported (it vanishes for reversible chains) and the kernel is then
symmetrized, which leaves every quadratic form unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chain import PilotChain, is_reversible, resolvent, spectral_gap
from .grid import Grid, divergence, gradient, vector_gradient
from .velocity import VelocityModel

__all__ = [
    "chi",
    "ChainFields",
    "LimitCoefficients",
    "compute_limit_coefficients",
    "enhanced_diffusion_check",
    "EnhancedDiffusionReport",
    "save_coefficients",
    "load_coefficients",
]

ASYMMETRY_TOL = 1e-8
EIGENVALUE_FLOOR = -1e-10
RANK_CUTOFF = 1e-12


def chi(n_values: np.ndarray, model: VelocityModel, grid: Grid) -> np.ndarray:
    """Drift field K(1) . grad n generated by a pilot state, shape (d, *shape)."""
    gn = gradient(grid, n_values)
    return np.einsum("ab,b...->a...", model.k_unit, gn)


class ChainFields:
    """Per-state drift fields and their exact resolvents and derivatives.

    Shared by the coefficient assembly and the generator calculus; all
    members are plain arrays with leading state axis.
    """

    def __init__(self, chain: PilotChain, model: VelocityModel):
        if chain.grid.dim != model.dim:
            raise ValueError("chain and velocity model dimensions differ")
        self.chain = chain
        self.model = model
        self.grid = chain.grid
        grid = chain.grid
        self.grad_states = np.stack([gradient(grid, s) for s in chain.states])  # (N, d, *shape)
        self.chi = np.einsum("ab,ib...->ia...", model.k_unit, self.grad_states)  # (N, d, *shape)
        self.r1_chi = resolvent(chain, 1.0, self.chi)
        self.r0_chi = resolvent(chain, 0.0, self.chi)
        self.u = self.r0_chi - self.r1_chi  # R0 R1 chi by the resolvent identity
        self.div_chi = np.stack([divergence(grid, c) for c in self.chi])  # (N, *shape)
        self.grad_r0_chi = np.stack([vector_gradient(grid, c) for c in self.r0_chi])  # (N, d, d, *shape)
        self.grad_u = np.stack([vector_gradient(grid, c) for c in self.u])


@dataclass(frozen=True)
class LimitCoefficients:
    """Diffusion, drift, and noise data of the limit equation."""

    grid: Grid
    k_base: np.ndarray  # (d, d): K(M)
    k_star: np.ndarray  # (d, d, *shape)
    psi: np.ndarray  # (d, *shape)
    k_strato: np.ndarray  # (d, d, *shape)
    psi_strato: np.ndarray  # (d, *shape)
    cov_kernel: np.ndarray  # (dG, dG), symmetrized
    asymmetry: float  # max |C - C^T| before symmetrization
    noise_eigenvalues: np.ndarray  # (rank,) descending, > RANK_CUTOFF
    noise_modes: np.ndarray  # (rank, d, *shape), orthonormal in L2
    rank: int
    radius: float
    gap: float

    def mode_matrix(self) -> np.ndarray:
        """Noise modes flattened to (rank, dG)."""
        return self.noise_modes.reshape(self.rank, -1)

    def apply_covariance(self, u: np.ndarray) -> np.ndarray:
        """S u for a vector field u of shape (d, *shape)."""
        flat = u.reshape(-1)
        out = self.cov_kernel @ flat * self.grid.cell_volume
        return out.reshape(u.shape)

    def apply_sqrt_covariance(self, u: np.ndarray) -> np.ndarray:
        """S^(1/2) u from the eigendecomposition."""
        flat = u.reshape(-1)
        pm = self.mode_matrix()
        coef = self.grid.cell_volume * (pm @ flat)
        return (np.sqrt(self.noise_eigenvalues) * coef @ pm).reshape(u.shape)

    def positivity_margin(self) -> float:
        """Smallest eigenvalue of sym(K*(x)) over the grid."""
        sym = 0.5 * (self.k_star + np.swapaxes(self.k_star, 0, 1))
        mats = np.moveaxis(sym.reshape(self.grid.dim, self.grid.dim, -1), -1, 0)
        return float(np.min(np.linalg.eigvalsh(mats)))


def compute_limit_coefficients(
    chain: PilotChain, model: VelocityModel, fields: ChainFields | None = None
) -> LimitCoefficients:
    """Assemble the limit-equation coefficients as exact stationary sums."""
    cf = fields if fields is not None else ChainFields(chain, model)
    grid = chain.grid
    lam = chain.stationary
    d = grid.dim

    k_base = model.k_equilibrium
    k_star = np.broadcast_to(
        k_base.reshape((d, d) + (1,) * d), (d, d) + grid.shape
    ).copy() + np.einsum("i,ia...,ib...->ab...", lam, cf.u, cf.chi)
    psi = np.einsum("i,i...,ia...->a...", lam, cf.div_chi, cf.u)
    k_strato = np.broadcast_to(
        k_base.reshape((d, d) + (1,) * d), (d, d) + grid.shape
    ).copy() + np.einsum("i,ia...,ib...->ab...", lam, cf.r1_chi, cf.chi)
    psi_strato = np.einsum("i,i...,ia...->a...", lam, cf.div_chi, cf.r1_chi)

    n = chain.n_states
    a_mat = cf.r0_chi.reshape(n, -1)
    b_mat = cf.chi.reshape(n, -1)
    kernel = np.einsum("i,ip,iq->pq", lam, a_mat, b_mat)
    asymmetry = float(np.max(np.abs(kernel - kernel.T)))
    kernel = 0.5 * (kernel + kernel.T)

    weighted = grid.cell_volume * kernel
    eigvals, eigvecs = np.linalg.eigh(weighted)
    if eigvals.min() < EIGENVALUE_FLOOR * max(1.0, float(np.max(np.abs(eigvals)))):
        raise ValueError(f"covariance operator has negative eigenvalue {eigvals.min():.3e}")
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    keep = eigvals > RANK_CUTOFF
    rank = int(np.count_nonzero(keep))
    modes = (eigvecs[:, keep].T / np.sqrt(grid.cell_volume)).reshape((rank, d) + grid.shape)

    return LimitCoefficients(
        grid=grid,
        k_base=k_base,
        k_star=k_star,
        psi=psi,
        k_strato=k_strato,
        psi_strato=psi_strato,
        cov_kernel=kernel,
        asymmetry=asymmetry,
        noise_eigenvalues=eigvals[keep],
        noise_modes=modes,
        rank=rank,
        radius=chain.radius,
        gap=spectral_gap(chain),
    )


@dataclass(frozen=True)
class EnhancedDiffusionReport:
    reversible: bool
    min_eigenvalue: float  # pointwise min eigenvalue of sym(K* - K(M))
    eigenvalue_field: np.ndarray  # (*shape,) smallest eigenvalue at each point
    satisfied: bool


def enhanced_diffusion_check(
    coeffs: LimitCoefficients, chain: PilotChain, tol: float = 1e-10
) -> EnhancedDiffusionReport:
    """Check K* >= K(M) pointwise (guaranteed for reversible pilots)."""
    d = coeffs.grid.dim
    diff = coeffs.k_star - coeffs.k_base.reshape((d, d) + (1,) * d)
    sym = 0.5 * (diff + np.swapaxes(diff, 0, 1))
    mats = np.moveaxis(sym.reshape(d, d, -1), -1, 0)
    eigs = np.linalg.eigvalsh(mats)[:, 0].reshape(coeffs.grid.shape)
    min_eig = float(np.min(eigs))
    rev = is_reversible(chain)
    ok = (min_eig >= -tol) if rev else True
    if rev and not ok:
        raise AssertionError(f"enhanced diffusion violated for reversible chain: min eig {min_eig:.3e}")
    return EnhancedDiffusionReport(reversible=rev, min_eigenvalue=min_eig, eigenvalue_field=eigs, satisfied=min_eig >= -tol)


def save_coefficients(coeffs: LimitCoefficients, path: str | Path) -> None:
    """Write a JSON manifest next to an .npz with the field data."""
    path = Path(path)
    npz_path = path.with_suffix(".npz")
    np.savez_compressed(
        npz_path,
        k_base=coeffs.k_base,
        k_star=coeffs.k_star,
        psi=coeffs.psi,
        k_strato=coeffs.k_strato,
        psi_strato=coeffs.psi_strato,
        cov_kernel=coeffs.cov_kernel,
        noise_eigenvalues=coeffs.noise_eigenvalues,
        noise_modes=coeffs.noise_modes,
    )
    manifest = {
        "schema": "kindiff-coefficients-v1",
        "grid": {"dim": coeffs.grid.dim, "resolution": coeffs.grid.resolution},
        "rank": coeffs.rank,
        "asymmetry": coeffs.asymmetry,
        "radius": coeffs.radius,
        "gap": None if np.isinf(coeffs.gap) else coeffs.gap,
        "positivity_margin": coeffs.positivity_margin(),
        "eigenvalues": [float(v) for v in coeffs.noise_eigenvalues],
        "arrays": npz_path.name,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_coefficients(path: str | Path) -> LimitCoefficients:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != "kindiff-coefficients-v1":
        raise ValueError(f"unrecognized coefficient bundle {path}")
    data = np.load(path.parent / manifest["arrays"])
    grid = Grid(dim=manifest["grid"]["dim"], resolution=manifest["grid"]["resolution"])
    return LimitCoefficients(
        grid=grid,
        k_base=data["k_base"],
        k_star=data["k_star"],
        psi=data["psi"],
        k_strato=data["k_strato"],
        psi_strato=data["psi_strato"],
        cov_kernel=data["cov_kernel"],
        asymmetry=float(manifest["asymmetry"]),
        noise_eigenvalues=data["noise_eigenvalues"],
        noise_modes=data["noise_modes"],
        rank=int(manifest["rank"]),
        radius=float(manifest["radius"]),
        gap=float("inf") if manifest["gap"] is None else float(manifest["gap"]),
    )
