"""Experiment configuration: one JSON file describing a full study.

The file carries the grid, the velocity model, the pilot chain (states as
Fourier-mode dictionaries, rates as a dense matrix, optional uniform
scaling onto the stable ball), the initial density, the test-function
profiles, the epsilon ladder, time/step parameters, path counts, and the
base seed.  The raw dictionary is kept verbatim so a config round-trips
through serialization without loss.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .chain import PilotChain, build_chain as build_pilot_chain, is_reversible, spectral_gap
from .errors import AdmissibilityError
from .grid import Grid, GridField, c3_norm, field_from_modes
from .velocity import VelocityModel, make_velocity_model

__all__ = ["ExperimentConfig", "ValidationReport", "load_config", "config_hash"]

SCHEMA_KEYS = {
    "name",
    "grid",
    "velocity_model",
    "chain",
    "initial_density",
    "test_functions",
    "epsilons",
    "T",
    "dt_target",
    "spde_dt",
    "n_records",
    "paths",
    "base_seed",
    "output_dir",
}


def canonical_json(raw: dict) -> str:
    return json.dumps(raw, indent=2, sort_keys=True) + "\n"


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ValidationReport:
    """Admissibility summary for a (model, chain) pairing."""

    name: str
    alpha: float
    radius: float
    margin: float  # alpha/4 - radius
    gap: float
    reversible: bool
    scale_factor: float  # uniform factor applied to the states (1.0 if none)
    n_states: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alpha": self.alpha,
            "radius": self.radius,
            "margin": self.margin,
            "gap": None if np.isinf(self.gap) else self.gap,
            "reversible": self.reversible,
            "scale_factor": self.scale_factor,
            "n_states": self.n_states,
        }


@dataclass
class ExperimentConfig:
    raw: dict

    def __post_init__(self):
        unknown = set(self.raw) - SCHEMA_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("grid", "velocity_model", "chain"):
            if key not in self.raw:
                raise ValueError(f"config is missing required key '{key}'")
        eps = self.epsilons
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ValueError("epsilon list must be strictly decreasing")
        for purpose, count in self.raw.get("paths", {}).items():
            if count < 2:
                raise ValueError(f"path count for '{purpose}' must be >= 2")
        if self.raw.get("T", 1.0) <= 0:
            raise ValueError("T must be positive")

    # -- raw accessors -------------------------------------------------------

    @property
    def name(self) -> str:
        return self.raw.get("name", "unnamed")

    @property
    def epsilons(self) -> list[float]:
        return [float(e) for e in self.raw.get("epsilons", [0.4, 0.2, 0.1, 0.05])]

    @property
    def T(self) -> float:
        return float(self.raw.get("T", 1.0))

    @property
    def dt_target(self) -> float | None:
        v = self.raw.get("dt_target")
        return None if v is None else float(v)

    @property
    def spde_dt(self) -> float:
        return float(self.raw.get("spde_dt", 1e-3))

    @property
    def n_records(self) -> int:
        return int(self.raw.get("n_records", 21))

    @property
    def base_seed(self) -> int:
        return int(self.raw.get("base_seed", 0))

    @property
    def output_dir(self) -> str:
        return self.raw.get("output_dir", "out")

    def paths_for(self, purpose: str, default: int) -> int:
        return int(self.raw.get("paths", {}).get(purpose, default))

    # -- constructed objects --------------------------------------------------

    def build_grid(self) -> Grid:
        g = self.raw["grid"]
        return Grid(dim=int(g.get("dim", 1)), resolution=int(g.get("resolution", 64)))

    def build_model(self) -> VelocityModel:
        m = self.raw["velocity_model"]
        return make_velocity_model(m["velocities"], m["weights"], m["equilibrium"], float(m["alpha"]))

    def state_scale_factor(self) -> float:
        """Uniform scaling applied to the chain states (1.0 unless auto_scale)."""
        spec = self.raw["chain"]
        if not spec.get("auto_scale", False):
            return 1.0
        grid = self.build_grid()
        alpha = float(self.raw["velocity_model"]["alpha"])
        radius = max(
            c3_norm(grid, field_from_modes(grid, state)) for state in spec["states"]
        )
        if radius == 0.0:
            return 1.0
        target = 0.999 * alpha / 4.0
        return min(1.0, target / radius)

    def build_chain(self) -> tuple[PilotChain, float]:
        """Build the pilot chain; returns (chain, applied scale factor)."""
        spec = self.raw["chain"]
        grid = self.build_grid()
        alpha = float(self.raw["velocity_model"]["alpha"])
        factor = self.state_scale_factor()
        states = [
            GridField(grid, factor * field_from_modes(grid, state)) for state in spec["states"]
        ]
        chain = build_pilot_chain(states, np.array(spec["rates"], dtype=float), alpha)
        return chain, factor

    def initial_density(self) -> np.ndarray:
        grid = self.build_grid()
        spec = self.raw.get("initial_density", {"0" if grid.dim == 1 else "0,0": 1.0})
        return field_from_modes(grid, spec)

    def test_functions(self) -> list[np.ndarray]:
        grid = self.build_grid()
        specs = self.raw.get("test_functions", [])
        return [field_from_modes(grid, s) for s in specs]

    def record_times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_records)

    # -- validation and io ----------------------------------------------------

    def validate(self) -> ValidationReport:
        """Run every admissibility check; raises AdmissibilityError on failure."""
        model = self.build_model()
        grid = self.build_grid()
        if model.dim != grid.dim:
            raise AdmissibilityError("vdv", "velocity model dimension differs from the grid")
        chain, factor = self.build_chain()
        gap = spectral_gap(chain)
        return ValidationReport(
            name=self.name,
            alpha=model.alpha,
            radius=chain.radius,
            margin=model.alpha / 4.0 - chain.radius,
            gap=gap,
            reversible=is_reversible(chain),
            scale_factor=factor,
            n_states=chain.n_states,
        )

    def to_json(self) -> str:
        return canonical_json(self.raw)

    def hash(self) -> str:
        return config_hash(self.raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config parse error in {path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return ExperimentConfig(raw=raw)
