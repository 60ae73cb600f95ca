"""Ensemble orchestration, statistics, scaling regressions, and reports.

Path seeds are derived from (base seed, purpose tag, path index), so a
study reproduces byte-for-byte for a fixed config and seed regardless of
worker count; ensemble reductions run in fixed path order.  Every
reported statistic carries a standard error.
"""

from __future__ import annotations

import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__ as _pkg_version
from .chain import PilotChain
from .coefficients import LimitCoefficients, compute_limit_coefficients, save_coefficients
from .config import ExperimentConfig
from .kinetic import EquilibriumStart, KineticStepper, KineticTrajectory, simulate_path
from .spde import SpdeSolver, SpdeTrajectory, solve_deterministic
from .velocity import VelocityModel

__all__ = [
    "EnsembleStats",
    "KineticEnsembleResult",
    "run_kinetic_ensemble",
    "run_spde_ensemble",
    "LawComparison",
    "compare_laws",
    "fit_loglog_slope",
    "run_convergence_study",
    "write_manifest",
]

Z_MAX = 3.0
VARIANCE_RATIO_BAND = (0.6, 1.6)

# seed-stream tags so different purposes never share a generator
KINETIC_STREAM = 1
SPDE_STREAM = 2


@dataclass
class EnsembleStats:
    """Per (time, test-function) moments of an ensemble of functionals."""

    times: np.ndarray  # (R,)
    mean: np.ndarray  # (R, X)
    var: np.ndarray  # (R, X), ddof=1
    se: np.ndarray  # (R, X)
    n_paths: int

    @classmethod
    def from_samples(cls, times: np.ndarray, samples: np.ndarray) -> "EnsembleStats":
        n = samples.shape[0]
        mean = samples.mean(axis=0)
        var = samples.var(axis=0, ddof=1)
        return cls(times=np.asarray(times), mean=mean, var=var, se=np.sqrt(var / n), n_paths=n)

    def index_of(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"time {t} not on the record mesh")
        return idx


@dataclass
class KineticEnsembleResult:
    stats: EnsembleStats
    samples: np.ndarray  # (n, R, X) functional values
    mass_drift_max: float
    min_f: float
    entropy_margin_max: float  # positive part of the entropy-inequality violation
    int_local_eq_mean: float  # E of the [0, T] integral of the equilibrium distance
    int_local_eq_se: float
    trajectories: list[KineticTrajectory] | None = None


def entropy_margin(traj: KineticTrajectory, epsilon: float) -> float:
    """Positive part of max_t [(H + (1/2 eps^2) int D) / (e^t H(0)) - 1]."""
    if traj.int_dissipation is None:
        raise ValueError("trajectory was run without entropy tracking")
    h0 = traj.entropy[0]
    if h0 <= 0:
        return 0.0
    lhs = traj.entropy + traj.int_dissipation / (2.0 * epsilon**2)
    bound = np.exp(traj.times) * h0
    return max(0.0, float(np.max(lhs / bound - 1.0)))


def _run_kinetic_path(args) -> KineticTrajectory:
    (chain, model, epsilon, T, dt_target, record_times, xis, rho_in, base_seed, idx,
     track_entropy) = args
    return simulate_path(
        EquilibriumStart(rho_in),
        chain,
        model,
        epsilon,
        T,
        dt_target=dt_target,
        seed=None,
        rng=np.random.default_rng([base_seed, KINETIC_STREAM, idx]),
        record_times=record_times,
        xis=xis,
        track_entropy=track_entropy,
    )


def run_kinetic_ensemble(
    chain: PilotChain,
    model: VelocityModel,
    epsilon: float,
    T: float,
    n_paths: int,
    base_seed: int,
    rho_in: np.ndarray,
    record_times: Sequence[float],
    xis: Sequence[np.ndarray],
    dt_target: float | None = None,
    track_entropy: bool = True,
    workers: int = 1,
    keep_trajectories: bool = False,
) -> KineticEnsembleResult:
    """Independent equilibrium-start paths with per-index derived seeds."""
    rec = np.asarray(record_times, dtype=float)
    xi_list = [np.asarray(x) for x in xis]
    if workers > 1:
        args = [
            (chain, model, epsilon, T, dt_target, rec, xi_list, rho_in, base_seed, i, track_entropy)
            for i in range(n_paths)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_run_kinetic_path, args, chunksize=8))
    else:
        stepper = KineticStepper(chain, model, epsilon)
        trajs = []
        for i in range(n_paths):
            trajs.append(
                simulate_path(
                    EquilibriumStart(rho_in),
                    chain,
                    model,
                    epsilon,
                    T,
                    dt_target=dt_target,
                    seed=None,
                    rng=np.random.default_rng([base_seed, KINETIC_STREAM, i]),
                    record_times=rec,
                    xis=xi_list,
                    track_entropy=track_entropy,
                    stepper=stepper,
                )
            )
    samples = np.stack([t.functionals for t in trajs])
    stats = EnsembleStats.from_samples(rec, samples)
    margins = [entropy_margin(t, epsilon) for t in trajs] if track_entropy else [0.0]
    leq = np.array([t.int_local_eq[-1] for t in trajs]) if track_entropy else np.zeros(1)
    return KineticEnsembleResult(
        stats=stats,
        samples=samples,
        mass_drift_max=max(t.mass_drift_max for t in trajs),
        min_f=min(t.min_f_overall for t in trajs),
        entropy_margin_max=max(margins),
        int_local_eq_mean=float(np.mean(leq)),
        int_local_eq_se=float(np.std(leq, ddof=1) / math.sqrt(len(leq))) if len(leq) > 1 else 0.0,
        trajectories=trajs if keep_trajectories else None,
    )


def run_spde_ensemble(
    coeffs: LimitCoefficients,
    rho_in: np.ndarray,
    T: float,
    dt: float,
    n_paths: int,
    base_seed: int,
    record_times: Sequence[float],
    xis: Sequence[np.ndarray],
) -> tuple[EnsembleStats, np.ndarray]:
    """Euler-Maruyama ensemble sharing one factorized solver."""
    solver = SpdeSolver(coeffs, dt)
    rec = np.asarray(record_times, dtype=float)
    xi_list = [np.asarray(x) for x in xis]
    trajs: list[SpdeTrajectory] = []
    for i in range(n_paths):
        rng = np.random.default_rng([base_seed, SPDE_STREAM, i])
        trajs.append(solver.run(rho_in, T, rng, rec, xis=xi_list))
    samples = np.stack([t.functionals for t in trajs])
    return EnsembleStats.from_samples(rec, samples), samples


@dataclass
class LawComparison:
    """Two-ensemble agreement of means and dispersions per (t, xi)."""

    times: np.ndarray
    z_scores: np.ndarray  # (R, X)
    variance_ratio: np.ndarray  # (R, X)
    gate_times: list[float]
    z_max: float
    ratio_band: tuple[float, float]
    mean_pass: bool
    variance_pass: bool

    @property
    def verdict(self) -> bool:
        return self.mean_pass and self.variance_pass

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "z_scores": self.z_scores.tolist(),
            "variance_ratio": self.variance_ratio.tolist(),
            "gate_times": self.gate_times,
            "z_max": self.z_max,
            "ratio_band": list(self.ratio_band),
            "mean_pass": self.mean_pass,
            "variance_pass": self.variance_pass,
            "verdict": self.verdict,
        }


def compare_laws(
    a: EnsembleStats,
    b: EnsembleStats,
    gate_times: Sequence[float] | None = None,
    z_max: float = Z_MAX,
    ratio_band: tuple[float, float] = VARIANCE_RATIO_BAND,
) -> LawComparison:
    """Two-sample z-test on means, dispersion-ratio test on variances."""
    if a.times.shape != b.times.shape or np.max(np.abs(a.times - b.times)) > 1e-9:
        raise ValueError("ensembles live on different record meshes")
    if a.mean.shape != b.mean.shape:
        raise ValueError("ensembles track different test functions")
    denom = np.sqrt(a.se**2 + b.se**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(denom > 0, (a.mean - b.mean) / denom, 0.0)
        ratio = np.where(b.var > 0, a.var / b.var, np.where(a.var > 0, np.inf, 1.0))
    if gate_times is None:
        gate_times = [t for t in a.times if t > 0]
    gate_idx = [a.index_of(t) for t in gate_times]
    mean_pass = bool(np.all(np.abs(z[gate_idx]) <= z_max))
    variance_pass = bool(
        np.all((ratio[gate_idx] >= ratio_band[0]) & (ratio[gate_idx] <= ratio_band[1]))
    )
    return LawComparison(
        times=a.times,
        z_scores=z,
        variance_ratio=ratio,
        gate_times=[float(t) for t in gate_times],
        z_max=z_max,
        ratio_band=ratio_band,
        mean_pass=mean_pass,
        variance_pass=variance_pass,
    )


def fit_loglog_slope(epsilons: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(value) against log(epsilon)."""
    x = np.log(np.asarray(epsilons, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def _format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_float(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_stats_csv(path: Path, stats: EnsembleStats, xi_names: Sequence[str]) -> None:
    header = ["t"]
    for name in xi_names:
        header += [f"mean_{name}", f"var_{name}", f"se_{name}"]
    rows = []
    for k, t in enumerate(stats.times):
        row = [t]
        for m in range(stats.mean.shape[1]):
            row += [stats.mean[k, m], stats.var[k, m], stats.se[k, m]]
        rows.append(row)
    write_csv(path, header, rows)


def write_trajectory_csv(path: Path, traj: KineticTrajectory) -> None:
    header = ["t", "H", "D", "local_eq_err", "mass", "min_f", "rho_l2"]
    rows = [
        [traj.times[k], traj.entropy[k], traj.dissipation[k], traj.local_eq_err[k],
         traj.mass[k], traj.min_f[k], traj.rho_l2[k]]
        for k in range(len(traj.times))
    ]
    write_csv(path, header, rows)


def write_spde_csv(path: Path, traj: SpdeTrajectory, xi_names: Sequence[str]) -> None:
    header = ["t", "mass"] + [f"rho_{n}" for n in xi_names]
    rows = [
        [traj.times[k], traj.mass[k], *traj.functionals[k]] for k in range(len(traj.times))
    ]
    write_csv(path, header, rows)


def write_manifest(out_dir: Path, config: ExperimentConfig, extra: dict | None = None) -> None:
    manifest = {
        "schema": "kindiff-manifest-v1",
        "config_name": config.name,
        "config_hash": config.hash(),
        "base_seed": config.base_seed,
        "grid": config.raw["grid"],
        "epsilons": config.epsilons,
        "versions": {
            "kindiff": _pkg_version,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": extra.pop("wall_time_s", None) if extra else None,
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_convergence_study(config: ExperimentConfig, out_dir: str | Path, workers: int = 1) -> dict:
    """Full study: admissibility, epsilon ladder, law comparison, mean check.

    Writes CSVs, the coefficient bundle, and report.json under ``out_dir``;
    returns the report dictionary.  Gates mirror the acceptance criteria;
    the report's "passed" entry is True only if every gate holds.
    """
    t_start = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report: dict = {"config": config.name, "gates": {}}
    validation = config.validate()
    report["validation"] = validation.to_dict()
    report["gates"]["admissibility"] = True

    model = config.build_model()
    chain, _ = config.build_chain()
    rho_in = config.initial_density()
    xis = config.test_functions()
    xi_names = [f"xi{m}" for m in range(len(xis))]
    rec = config.record_times()
    T = config.T

    # -- epsilon ladder: local-equilibrium scaling --------------------------
    n_scaling = config.paths_for("scaling", 50)
    ladder = {}
    for eps in config.epsilons:
        res = run_kinetic_ensemble(
            chain, model, eps, T, n_scaling, config.base_seed, rho_in, rec, xis,
            dt_target=config.dt_target, track_entropy=True, workers=workers,
        )
        ladder[eps] = res
        write_stats_csv(out / f"kinetic_stats_eps{eps:g}.csv", res.stats, xi_names)
    slopes_x = config.epsilons
    slopes_y = [ladder[e].int_local_eq_mean for e in slopes_x]
    slope = fit_loglog_slope(slopes_x, slopes_y)
    report["local_eq"] = {
        "epsilons": slopes_x,
        "integrals": slopes_y,
        "integral_ses": [ladder[e].int_local_eq_se for e in slopes_x],
        "slope": slope,
    }
    report["gates"]["local_eq_slope"] = bool(1.7 <= slope <= 2.3)
    report["gates"]["mass_conservation"] = bool(
        max(ladder[e].mass_drift_max for e in slopes_x) <= 1e-10
    )
    report["gates"]["positivity"] = bool(min(ladder[e].min_f for e in slopes_x) >= -1e-12)
    report["gates"]["entropy_inequality"] = bool(
        max(ladder[e].entropy_margin_max for e in slopes_x) <= 1e-3
    )

    # -- exact coefficients and SPDE ensembles ------------------------------
    coeffs = compute_limit_coefficients(chain, model)
    save_coefficients(coeffs, out / "coefficients.json")
    eps_min = min(config.epsilons)
    n_law = config.paths_for("law", 400)
    kin_res = run_kinetic_ensemble(
        chain, model, eps_min, T, n_law, config.base_seed + 1, rho_in, rec, xis,
        dt_target=config.dt_target, track_entropy=False, workers=workers,
    )
    spde_stats, _ = run_spde_ensemble(
        coeffs, rho_in, T, config.spde_dt, config.paths_for("spde", n_law),
        config.base_seed + 2, rec, xis,
    )
    write_stats_csv(out / "kinetic_stats_law.csv", kin_res.stats, xi_names)
    write_stats_csv(out / "spde_stats.csv", spde_stats, xi_names)

    gate_times = [t for t in (0.25, 0.5, 1.0) if t <= T and np.min(np.abs(rec - t)) < 1e-9]
    law = compare_laws(kin_res.stats, spde_stats, gate_times=gate_times or None)
    report["law_comparison"] = law.to_dict()
    report["gates"]["law_means"] = law.mean_pass
    report["gates"]["law_variances"] = law.variance_pass

    # -- SPDE ensemble mean against the averaged equation --------------------
    mean_traj = solve_deterministic(rho_in, "mean", coeffs, T, config.spde_dt, record_times=rec, xis=xis)
    mean_z = np.where(
        spde_stats.se > 0, (spde_stats.mean - mean_traj.functionals) / spde_stats.se, 0.0
    )
    report["spde_mean_check"] = {"max_abs_z": float(np.max(np.abs(mean_z)))}
    report["gates"]["spde_mean_equation"] = bool(np.max(np.abs(mean_z)) <= Z_MAX)

    report["passed"] = all(report["gates"].values())
    report["wall_time_s"] = time.time() - t_start
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, config, extra={"wall_time_s": report["wall_time_s"], "command": "converge"})
    return report
