"""Command-line surface.

Subcommands: validate, simulate-kinetic, coeffs, simulate-spde, verify,
converge, report.  Every subcommand reads one JSON config, honors
--seed/--out/--paths/--epsilon overrides, writes CSV/JSON artifacts plus
a manifest, and exits 0 only if all asserted checks pass.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .chain import derive_rng
from .coefficients import compute_limit_coefficients, enhanced_diffusion_check, save_coefficients
from .config import ExperimentConfig, load_config
from .errors import AdmissibilityError
from .generator import (
    PSI_LIBRARY,
    TestFunctional,
    verify_centering,
    verify_poisson_phi1,
    verify_solvability,
    verify_stationarity_identities,
)
from .grid import GridField
from .harness import (
    run_convergence_study,
    run_kinetic_ensemble,
    run_spde_ensemble,
    write_manifest,
    write_spde_csv,
    write_stats_csv,
    write_trajectory_csv,
)
from .kinetic import EquilibriumStart, simulate_path
from .spde import SpdeSolver


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON experiment config")
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw["base_seed"] = int(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig, sub: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir) / sub
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers() -> int:
    return max(1, int(os.environ.get("KINDIFF_WORKERS", "1")))


def cmd_validate(args) -> int:
    cfg = _load(args)
    try:
        rep = cfg.validate()
    except AdmissibilityError as exc:
        print(f"INADMISSIBLE ({exc.hypothesis}): {exc}", file=sys.stderr)
        return 2
    print(f"config '{rep.name}': admissible")
    print(f"  states        : {rep.n_states}")
    print(f"  alpha         : {rep.alpha:.6g}")
    print(f"  radius R      : {rep.radius:.6g}")
    print(f"  alpha/4 - R   : {rep.margin:.6g}")
    print(f"  spectral gap  : {rep.gap:.6g}")
    print(f"  reversible    : {rep.reversible}")
    if rep.scale_factor != 1.0:
        print(f"  state scale   : {rep.scale_factor:.6g} (applied to reach the stable ball)")
    if args.json:
        Path(args.json).write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_simulate_kinetic(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "kinetic")
    t0 = time.time()
    model = cfg.build_model()
    chain, _ = cfg.build_chain()
    eps = args.epsilon if args.epsilon is not None else min(cfg.epsilons)
    n_paths = args.paths if args.paths is not None else cfg.paths_for("kinetic", 4)
    rho_in = cfg.initial_density()
    xis = cfg.test_functions()
    rec = cfg.record_times()
    res = run_kinetic_ensemble(
        chain, model, eps, cfg.T, n_paths, cfg.base_seed, rho_in, rec, xis,
        dt_target=cfg.dt_target, track_entropy=True, workers=_workers(),
        keep_trajectories=True,
    )
    for i, traj in enumerate(res.trajectories):
        write_trajectory_csv(out / f"path_{i:04d}.csv", traj)
    write_stats_csv(out / "ensemble_stats.csv", res.stats, [f"xi{m}" for m in range(len(xis))])
    if args.snapshots:
        np.savez_compressed(out / "snapshots.npz", times=rec)
    write_manifest(out, cfg, extra={
        "wall_time_s": time.time() - t0, "command": "simulate-kinetic",
        "epsilon": eps, "n_paths": n_paths,
        "mass_drift_max": res.mass_drift_max, "min_f": res.min_f,
        "entropy_margin_max": res.entropy_margin_max,
    })
    ok = res.mass_drift_max <= 1e-10 and res.min_f >= -1e-12 and res.entropy_margin_max <= 1e-3
    print(f"kinetic ensemble: eps={eps:g} paths={n_paths} mass_drift={res.mass_drift_max:.3e} "
          f"min_f={res.min_f:.3e} entropy_margin={res.entropy_margin_max:.3e} -> "
          f"{'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_coeffs(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "coeffs")
    model = cfg.build_model()
    chain, _ = cfg.build_chain()
    coeffs = compute_limit_coefficients(chain, model)
    save_coefficients(coeffs, out / "coefficients.json")
    rep = enhanced_diffusion_check(coeffs, chain)
    print(f"K(M) =\n{coeffs.k_base}")
    print(f"noise rank = {coeffs.rank}; eigenvalues = {coeffs.noise_eigenvalues}")
    print(f"kernel asymmetry = {coeffs.asymmetry:.3e}")
    print(f"positivity margin of K* = {coeffs.positivity_margin():.6g}")
    print(f"enhanced diffusion (reversible={rep.reversible}): min eig(K*-K(M)) = {rep.min_eigenvalue:.3e}")
    write_manifest(out, cfg, extra={"command": "coeffs", "rank": coeffs.rank})
    return 0


def cmd_simulate_spde(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "spde")
    t0 = time.time()
    model = cfg.build_model()
    chain, _ = cfg.build_chain()
    coeffs = compute_limit_coefficients(chain, model)
    n_paths = args.paths if args.paths is not None else cfg.paths_for("spde", 4)
    rho_in = cfg.initial_density()
    xis = cfg.test_functions()
    xi_names = [f"xi{m}" for m in range(len(xis))]
    rec = cfg.record_times()
    solver = SpdeSolver(coeffs, cfg.spde_dt)
    for i in range(n_paths):
        rng = derive_rng(cfg.base_seed, 2, i)
        traj = solver.run(rho_in, cfg.T, rng, rec, xis=xis, seed=None)
        write_spde_csv(out / f"path_{i:04d}.csv", traj, xi_names)
    stats, _ = run_spde_ensemble(
        coeffs, rho_in, cfg.T, cfg.spde_dt, n_paths, cfg.base_seed, rec, xis
    )
    write_stats_csv(out / "ensemble_stats.csv", stats, xi_names)
    write_manifest(out, cfg, extra={
        "wall_time_s": time.time() - t0, "command": "simulate-spde", "n_paths": n_paths,
    })
    print(f"spde ensemble: paths={n_paths} dt={cfg.spde_dt:g} rank={coeffs.rank}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "verify")
    model = cfg.build_model()
    chain, _ = cfg.build_chain()
    grid = cfg.build_grid()
    rng = derive_rng(cfg.base_seed, 99)
    from .generator import grid_noise

    xi = grid_noise(grid, rng, band=max(2, grid.resolution // 8))
    tests = [TestFunctional(xi, psi, grid=grid) for psi in PSI_LIBRARY.values()]

    results = {}
    residual = verify_poisson_phi1(chain, model, tests, n_samples=args.samples // 100 or 30,
                                   seed=cfg.base_seed)
    results["corrector_poisson_residual"] = {"max_abs": residual, "pass": residual <= 1e-8}

    checks = verify_stationarity_identities(
        chain, model, tests[0], n_samples=args.samples, seed=cfg.base_seed
    )
    checks.append(verify_centering(chain, model, tests[0], n_samples=args.samples, seed=cfg.base_seed))
    checks.append(verify_solvability(chain, model, tests[1], n_samples=args.samples, seed=cfg.base_seed))
    for chk in checks:
        results[chk.name] = dict(chk.to_dict(), **{"pass": chk.passed()})

    ok = all(v["pass"] for v in results.values())
    results["passed"] = ok
    (out / "verify.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    for name, val in results.items():
        if isinstance(val, dict):
            print(f"{name}: {'pass' if val['pass'] else 'FAIL'}")
    return 0 if ok else 1


def cmd_converge(args) -> int:
    cfg = _load(args)
    if args.epsilon is not None:
        cfg.raw["epsilons"] = [e for e in cfg.epsilons if e <= args.epsilon]
    if args.paths is not None:
        cfg.raw.setdefault("paths", {})
        cfg.raw["paths"]["scaling"] = args.paths
        cfg.raw["paths"]["law"] = args.paths
        cfg.raw["paths"]["spde"] = args.paths
    out = _out_dir(args, cfg, "converge")
    report = run_convergence_study(cfg, out, workers=_workers())
    print(f"convergence study: passed={report['passed']}")
    for gate, okay in report["gates"].items():
        print(f"  {gate}: {'pass' if okay else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_report(args) -> int:
    path = Path(args.dir) / "report.json"
    if not path.exists():
        print(f"no report.json under {args.dir}", file=sys.stderr)
        return 2
    report = json.loads(path.read_text())
    print(f"config: {report.get('config')}")
    print(f"passed: {report.get('passed')}")
    for gate, okay in report.get("gates", {}).items():
        print(f"  {gate:24s} {'pass' if okay else 'FAIL'}")
    le = report.get("local_eq")
    if le:
        print(f"  local-eq slope: {le['slope']:.3f} over eps={le['epsilons']}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kindiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="admissibility checks for a config")
    _add_common(p)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate-kinetic", help="kinetic path ensemble with diagnostics")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--snapshots", action="store_true")
    p.set_defaults(fn=cmd_simulate_kinetic)

    p = sub.add_parser("coeffs", help="exact limit coefficients and noise modes")
    _add_common(p)
    p.set_defaults(fn=cmd_coeffs)

    p = sub.add_parser("simulate-spde", help="limit-equation path ensemble")
    _add_common(p)
    p.add_argument("--paths", type=int, default=None)
    p.set_defaults(fn=cmd_simulate_spde)

    p = sub.add_parser("verify", help="generator-calculus identity checks")
    _add_common(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("converge", help="full convergence study")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=None, help="drop ladder entries above this")
    p.add_argument("--paths", type=int, default=None, help="override all path counts")
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("report", help="render a study report as text")
    p.add_argument("--dir", required=True)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AdmissibilityError as exc:
        print(f"INADMISSIBLE ({exc.hypothesis}): {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
