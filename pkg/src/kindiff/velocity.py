"""Discrete velocity models, moment functionals, and the relaxation operator.

A model is a finite velocity set inside the unit ball with a probability
weight per point and a positive redistribution density.  Validation checks
the normalization and cancellation sums (first moment of the weights,
first and third moments of the density) at tight tolerance, plus the
two-sided bound on the density.  The convenience constructors build
symmetric sets (v in V implies -v in V with equal weight, even density),
which satisfy the cancellation sums by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityError

__all__ = [
    "VelocityModel",
    "Moments",
    "make_velocity_model",
    "moments",
    "relaxation",
    "two_speed_model",
    "symmetric_speeds_model",
    "ring_model",
]

MOMENT_TOL = 1e-12


@dataclass(frozen=True)
class VelocityModel:
    """Finite velocity set with weights and redistribution density."""

    velocities: np.ndarray  # (n_v, dim)
    weights: np.ndarray  # (n_v,)
    equilibrium: np.ndarray  # (n_v,)
    alpha: float

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float, copy=True)
        if v.ndim == 1:
            v = v[:, None]
        w = np.array(self.weights, dtype=float, copy=True)
        m = np.array(self.equilibrium, dtype=float, copy=True)
        for arr in (v, w, m):
            arr.setflags(write=False)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "equilibrium", m)

    @property
    def dim(self) -> int:
        return self.velocities.shape[1]

    @property
    def n_velocities(self) -> int:
        return self.velocities.shape[0]

    def second_moment(self, profile: np.ndarray) -> np.ndarray:
        """K(f) for an x-independent profile: sum_j w_j v_j (x) v_j f_j."""
        return np.einsum("j,ja,jb,j->ab", self.weights, self.velocities, self.velocities, profile)

    @property
    def k_unit(self) -> np.ndarray:
        """K(1) = sum_j w_j v_j (x) v_j."""
        return self.second_moment(np.ones(self.n_velocities))

    @property
    def k_equilibrium(self) -> np.ndarray:
        """K(M), the diffusion matrix of the unperturbed limit."""
        return self.second_moment(self.equilibrium)


@dataclass(frozen=True)
class Moments:
    """First three velocity moments of a profile."""

    density: np.ndarray | float
    current: np.ndarray
    second_moment: np.ndarray


def make_velocity_model(velocities, weights, equilibrium, alpha, tol: float = MOMENT_TOL) -> VelocityModel:
    """Validate and build a velocity model.

    Rejects (with the violated hypothesis named) any failure of the
    normalization/cancellation sums (vdv), the two-sided density bound
    (HypM), speeds above 1, or non-positive weights.
    """
    model = VelocityModel(velocities, weights, equilibrium, alpha)
    v, w, m = model.velocities, model.weights, model.equilibrium
    if not (0.0 < alpha < 1.0 or alpha == 1.0):
        raise AdmissibilityError("HypM", f"alpha must lie in (0, 1], got {alpha}")
    if np.any(w <= 0):
        raise AdmissibilityError("vdv", "weights must be positive")
    if v.shape[0] != w.shape[0] or v.shape[0] != m.shape[0]:
        raise AdmissibilityError("vdv", "velocities, weights, equilibrium must have equal length")
    speeds = np.sqrt(np.sum(v * v, axis=1))
    if np.any(speeds > 1.0 + tol):
        raise AdmissibilityError("vdv", f"speeds must satisfy |v| <= 1, max is {speeds.max():.6g}")
    if np.any(m < alpha - tol) or np.any(m > 1.0 / alpha + tol):
        raise AdmissibilityError(
            "HypM", f"density must lie in [{alpha:.6g}, {1/alpha:.6g}], range is [{m.min():.6g}, {m.max():.6g}]"
        )

    checks = {
        "sum w": abs(float(np.sum(w)) - 1.0),
        "sum w v": float(np.max(np.abs(np.einsum("j,ja->a", w, v)))),
        "sum w M": abs(float(np.sum(w * m)) - 1.0),
        "sum w v M": float(np.max(np.abs(np.einsum("j,ja,j->a", w, v, m)))),
        "sum w vvv M": float(np.max(np.abs(np.einsum("j,ja,jb,jc,j->abc", w, v, v, v, m)))),
    }
    for name, err in checks.items():
        if err > tol:
            raise AdmissibilityError("vdv", f"moment identity '{name}' violated by {err:.3e}")
    return model


def _weight_view(model: VelocityModel, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Broadcastable weights/velocities for a profile (n_v, *space)."""
    extra = f.ndim - 1
    w = model.weights.reshape((-1,) + (1,) * extra)
    return w, model.velocities


def moments(f: np.ndarray, model: VelocityModel) -> Moments:
    """Density, current, and second moment of a velocity profile.

    ``f`` has shape (n_v,) or (n_v, *space); moments keep the space axes.
    """
    w, v = _weight_view(model, f)
    wf = w * f
    density = np.sum(wf, axis=0)
    current = np.einsum("j...,ja->a...", wf, v)
    second = np.einsum("j...,ja,jb->ab...", wf, v, v)
    if f.ndim == 1:
        density = float(density)
    return Moments(density=density, current=current, second_moment=second)


def density_of(f: np.ndarray, model: VelocityModel):
    """Just the density moment (cheap path used in inner loops)."""
    w = model.weights.reshape((-1,) + (1,) * (f.ndim - 1))
    out = np.sum(w * f, axis=0)
    return float(out) if f.ndim == 1 else out


def relaxation(f: np.ndarray, model: VelocityModel) -> np.ndarray:
    """BGK relaxation operator: density(f) * M - f.

    The density of the output vanishes identically (mass cancellation).
    """
    rho = density_of(f, model)
    m = model.equilibrium.reshape((-1,) + (1,) * (f.ndim - 1))
    return rho * m - f


def two_speed_model() -> VelocityModel:
    """d=1 symmetric two-speed model: V = {+1, -1}, uniform weights, M = 1."""
    return make_velocity_model([[1.0], [-1.0]], [0.5, 0.5], [1.0, 1.0], alpha=1.0)


def symmetric_speeds_model(speeds, densities, alpha: float | None = None) -> VelocityModel:
    """d=1 model with velocity pairs {+-s_i}, uniform weights, even density.

    ``densities`` gives M on each speed pair; it is rescaled to unit mean.
    When alpha is omitted, the tightest admissible bound for the rescaled
    density is used.
    """
    speeds = np.asarray(speeds, dtype=float)
    densities = np.asarray(densities, dtype=float)
    v = np.concatenate([speeds, -speeds])[:, None]
    n = v.shape[0]
    w = np.full(n, 1.0 / n)
    m = np.concatenate([densities, densities])
    m = m / np.sum(w * m)
    if alpha is None:
        alpha = min(float(np.min(m)), 1.0 / float(np.max(m)), 1.0)
    return make_velocity_model(v, w, m, alpha)


def ring_model(n_points: int = 8, even_coeff: float = 0.0, alpha: float | None = None) -> VelocityModel:
    """d=2 model on the unit circle at angles 2 pi k / n, uniform weights.

    Density M(v) = 1 + even_coeff * (v_x^2 - v_y^2): even, mean one.
    """
    if n_points % 2 != 0:
        raise ValueError("n_points must be even so that the set is symmetric")
    half = n_points // 2
    ang = 2.0 * np.pi * np.arange(half) / n_points
    v_half = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v_half[np.abs(v_half) < 1e-15] = 0.0
    # second half is the exact float negation, so odd sums cancel exactly
    v = np.concatenate([v_half, -v_half])
    w = np.full(n_points, 1.0 / n_points)
    m = 1.0 + even_coeff * (v[:, 0] ** 2 - v[:, 1] ** 2)
    m = m / np.sum(w * m)
    if alpha is None:
        alpha = min(float(np.min(m)), 1.0 / float(np.max(m)), 1.0)
    return make_velocity_model(v, w, m, alpha)
