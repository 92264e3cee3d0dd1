"""Command-line entry point: subcommand dispatch and run-directory output.

Every run writes a self-describing directory runs/<timestamp>-<subcommand>/
containing

    config.echo    the fully resolved configuration (valid TOML; re-running
                   with --config on it reproduces verdict.json and
                   series.csv bit-exactly)
    verdict.json   the probe verdict / report
    series.csv     time series, where the subcommand produces one
    metadata.json  volatile bookkeeping (wall time, package version)

Exit status: 0 on pass/converged, 2 on probe failure or hypothesis
violation, 1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .brackets import TangentField, double_bracket, double_bracket_oracle
from .closure import determining_closure
from .config import ConfigError, RunConfig, parse_config
from .drift import SpectralState, energy_flux
from .ergodicity import BoxGrid, lyapunov_check, mixing_probe, support_probe
from .hormander import check_hormander
from .lattice import Truncation
from .sde import BlowUpError, SimulationConfig, run_trajectory
from .steering import replay_steering, solve_steering

SUBCOMMANDS = (
    "simulate", "check-determining", "hormander-rank", "lyapunov",
    "mixing", "support", "steer", "drift-selftest",
)


def seeded_state(truncation: Truncation, seed: int, energy: float) -> SpectralState:
    """Deterministic state with the prescribed kinetic energy."""
    if energy == 0.0:
        return SpectralState.zero(truncation)
    st = SpectralState.random(truncation, np.random.default_rng(seed))
    return SpectralState(truncation, st.u * np.sqrt(energy / st.energy()), validate=False)


def _write_run_dir(base: Path, subcommand: str, cfg: RunConfig, verdict: str,
                   series: str | None, wall: float) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = base / f"{stamp}-{subcommand}"
    run_dir.mkdir(parents=True, exist_ok=False)
    (run_dir / "config.echo").write_text(cfg.echo_toml())
    (run_dir / "verdict.json").write_text(verdict)
    if series is not None:
        (run_dir / "series.csv").write_text(series)
    meta = {
        "schema_version": 1,
        "subcommand": subcommand,
        "package_version": __version__,
        "seed": cfg.sim.seed,
        "wall_time_s": wall,
        "note": "wall_time_s is volatile; verdict.json and series.csv are deterministic",
    }
    (run_dir / "metadata.json").write_text(json.dumps(meta, indent=2))
    return run_dir


def _cmd_simulate(cfg: RunConfig):
    initial = seeded_state(cfg.truncation, cfg.simulate["initial_seed"],
                           cfg.simulate["initial_energy"])
    try:
        result = run_trajectory(initial, cfg.sim, cfg.spec)
    except BlowUpError as exc:
        verdict = json.dumps(
            {"schema_version": 1, "completed": False, "blew_up": True,
             "blow_up_step": exc.step, "blow_up_time": exc.time}, indent=2)
        return 2, verdict, None
    verdict = json.dumps(
        {
            "schema_version": 1,
            "completed": True,
            "blew_up": False,
            "n_steps": result.n_steps,
            "final_energy": float(result.energies()[-1]),
        },
        indent=2,
    )
    return 0, verdict, result.to_csv()


def _cmd_check_determining(cfg: RunConfig):
    shuffle = cfg.closure["shuffle_seed"]
    res = determining_closure(cfg.forced, cfg.truncation,
                              shuffle_seed=None if shuffle < 0 else shuffle)
    return (0 if res.is_determining else 2), res.to_json(), None


def _cmd_hormander(cfg: RunConfig):
    report = check_hormander(cfg.forced, cfg.truncation, debug=True)
    return (0 if report.passed else 2), report.to_json(), None


def _cmd_lyapunov(cfg: RunConfig):
    initial = seeded_state(cfg.truncation, cfg.simulate["initial_seed"],
                           cfg.simulate["initial_energy"])
    report = lyapunov_check(cfg.sim, cfg.spec, initial)
    return (0 if report.passed else 2), report.to_json(), report.series_csv()


def _cmd_mixing(cfg: RunConfig):
    mix = cfg.mixing
    initial_a = seeded_state(cfg.truncation, cfg.sim.seed + 1, mix["energy_a"])
    initial_b = seeded_state(cfg.truncation, cfg.sim.seed + 2, mix["energy_b"])
    est = mixing_probe(cfg.sim, cfg.spec, initial_a, initial_b,
                       n_quadratics=mix["quadratics"],
                       stride=mix["stride"] or None)
    return (0 if est.passed else 2), est.to_json(), est.series_csv()


def _cmd_support(cfg: RunConfig):
    sup = cfg.support
    grid = BoxGrid(
        coords=[(tuple(c[0]), c[1], int(c[2])) for c in sup["coords"]],
        half_width=float(sup["half_width"]),
        bins=int(sup["bins"]),
    )
    initial = seeded_state(cfg.truncation, cfg.simulate["initial_seed"],
                           cfg.simulate["initial_energy"])
    report = support_probe(cfg.sim, cfg.spec, initial, grid,
                           stride=sup["stride"] or None)
    ok = report.visited_fraction[-1] >= float(sup["threshold"])
    verdict = json.loads(report.to_json())
    verdict["threshold"] = float(sup["threshold"])
    verdict["passed"] = bool(ok)
    return (0 if ok else 2), json.dumps(verdict, indent=2), report.series_csv()


def _cmd_steer(cfg: RunConfig):
    st = cfg.steering
    rng_seed = int(st["pair_seed"])
    initial = seeded_state(cfg.truncation, rng_seed * 2 + 101, float(st["scale"]))
    target = seeded_state(cfg.truncation, rng_seed * 2 + 102, float(st["scale"]))
    knots = int(st["knots"])
    T = float(st["T"])
    shoot_cfg = SimulationConfig(
        nu=cfg.sim.nu, dt=T / (knots - 1) / 32, horizon=T, seed=cfg.sim.seed
    )
    res = solve_steering(initial, target, T, knots, shoot_cfg, cfg.spec)
    verdict = res.to_json(initial=initial, target=target, cfg=shoot_cfg, spec=cfg.spec)
    return (0 if res.converged else 2), verdict, None


def _cmd_drift_selftest(cfg: RunConfig):
    rng = np.random.default_rng(cfg.sim.seed)
    worst_flux = 0.0
    for N in (1, 2):
        trunc = Truncation(N)
        for _ in range(100):
            st = SpectralState.random(trunc, rng)
            scale = st.energy() ** 1.5 * np.sqrt(3.0) * N
            worst_flux = max(worst_flux, abs(energy_flux(st)) / max(scale, 1e-300))
    trunc = Truncation(2)
    canon = trunc.canonical
    worst_bracket = 0.0
    for _ in range(100):
        m = canon[rng.integers(len(canon))]
        n = canon[rng.integers(len(canon))]
        fields = []
        for k in (m, n):
            e1, e2 = trunc.frame(k)
            a = rng.standard_normal(4)
            fields.append(TangentField.single_mode(
                trunc, k, vr=a[0] * e1 + a[1] * e2, vs=a[2] * e1 + a[3] * e2))
        diff = (double_bracket(*fields) - double_bracket_oracle(*fields)).max_norm()
        worst_bracket = max(worst_bracket, diff)
    ok = worst_flux <= 1e-12 and worst_bracket <= 1e-10
    verdict = json.dumps(
        {
            "schema_version": 1,
            "energy_flux_rel_max": worst_flux,
            "bracket_vs_oracle_max": worst_bracket,
            "passed": bool(ok),
        },
        indent=2,
    )
    return (0 if ok else 2), verdict, None


_HANDLERS = {
    "simulate": _cmd_simulate,
    "check-determining": _cmd_check_determining,
    "hormander-rank": _cmd_hormander,
    "lyapunov": _cmd_lyapunov,
    "mixing": _cmd_mixing,
    "support": _cmd_support,
    "steer": _cmd_steer,
    "drift-selftest": _cmd_drift_selftest,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nsgalerkin",
        description="Spectral-truncation toolkit: simulation, bracket closure, "
                    "rank checks, ergodicity probes and steering",
    )
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--out-dir", default="runs", help="parent directory for run output")
        sp.add_argument("--n", type=int, dest="N", help="cut-off N")
        sp.add_argument("--nu", type=float, help="viscosity")
        sp.add_argument("--dt", type=float, help="time step")
        sp.add_argument("--horizon", type=float, help="integration horizon")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--ensemble", type=int, help="trajectory count")
        sp.add_argument("--scheme", choices=("exponential_euler", "euler_maruyama"))
        if name == "steer":
            sp.add_argument("--replay", help="steering verdict.json to re-integrate and verify")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "N": args.N, "nu": args.nu, "dt": args.dt, "horizon": args.horizon,
        "seed": args.seed, "ensemble": args.ensemble, "scheme": args.scheme,
    }
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    if args.subcommand == "steer" and getattr(args, "replay", None):
        try:
            payload = json.loads(Path(args.replay).read_text())
            report = replay_steering(payload, cfg.truncation)
        except (OSError, KeyError, ValueError) as exc:
            print(f"replay error: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(report, indent=2))
        return 0 if report["matches"] else 2

    t0 = time.perf_counter()
    try:
        code, verdict, series = _HANDLERS[args.subcommand](cfg)
    except ValueError as exc:
        # a module precondition the static config checks could not cover
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    run_dir = _write_run_dir(Path(args.out_dir), args.subcommand, cfg, verdict, series, wall)
    print(f"{run_dir}")
    print(verdict)
    return code


if __name__ == "__main__":
    sys.exit(main())
