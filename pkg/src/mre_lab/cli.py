"""Command-line front end.

Subcommands: ``run`` (config-driven simulation), ``preset`` (the canned
experiments), ``lagrange-check`` (transport-identity residual of a run),
``norms`` (norm table of a snapshot), ``oracle`` (direct-DFT comparisons).

Errors exit nonzero with one machine-parseable line ``error:<category>: ...``
on stderr; argparse handles usage errors with exit code 2.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, analysis
from .config import ConfigError, emit_config, parse_config
from .io import (
    DirLock,
    LockHeldError,
    RunManifest,
    SnapshotError,
    StopWatch,
    read_snapshot,
    render_heatmap,
    write_diagnostics_csv,
    write_snapshot,
)
from .solver import BlowUpError, run_simulation
from .spectral import Grid, transform


def _fail(category: str, message: str) -> int:
    print(f"error:{category}: {message}", file=sys.stderr)
    return 1


def _cmd_run(args) -> int:
    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        return _fail("config", str(exc))
    os.makedirs(args.out, exist_ok=True)
    watch = StopWatch()
    records = []
    try:
        with DirLock(args.out):
            state = run_simulation(config, on_record=records.append)
            watch.mark("simulation")
            manifest = RunManifest(
                config=emit_config(config), rng_seed=config.rng_seed, version=__version__
            )
            csv_path = os.path.join(args.out, "diagnostics.csv")
            write_diagnostics_csv(
                records, csv_path, config.diagnostics_p_list,
                config.diagnostics_alpha_list, config.grid.d,
            )
            manifest.add(csv_path)
            snap_path = os.path.join(args.out, "final.mref")
            write_snapshot(
                state.B.samples(), config.grid.d, config.grid.n,
                state.t, config.gamma, snap_path,
            )
            manifest.add(snap_path)
            if config.grid.d == 2:
                from .relaxation import stream_function

                pgm_path = os.path.join(args.out, "phi.pgm")
                sidecar = render_heatmap(stream_function(state.B).samples(), pgm_path)
                manifest.add(pgm_path)
                manifest.add(sidecar)
            watch.mark("outputs")
            manifest.timings = watch.marks
            manifest.write(os.path.join(args.out, "manifest.json"))
    except LockHeldError as exc:
        return _fail("lock", str(exc))
    except BlowUpError as exc:
        return _fail("blowup", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    final = records[-1]
    print(
        f"run complete: t={state.t:g} energy={final.energy:.6e} "
        f"energy_residual={final.energy_residual:.3e} -> {args.out}"
    )
    return 0


def _write_preset_outputs(args, records, summary: dict, config_echo: dict, seed: int) -> None:
    os.makedirs(args.out, exist_ok=True)
    with DirLock(args.out):
        manifest = RunManifest(config=config_echo, rng_seed=seed, version=__version__)
        if records:
            csv_path = os.path.join(args.out, "diagnostics.csv")
            p_list = sorted(records[0].lp_norms)
            alpha_list = sorted(records[0].u_alpha_norms)
            d = 3 if records[0].helicity is not None else 2
            write_diagnostics_csv(records, csv_path, p_list, alpha_list, d)
            manifest.add(csv_path)
        summary_path = os.path.join(args.out, "summary.json")
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        manifest.add(summary_path)
        manifest.write(os.path.join(args.out, "manifest.json"))


def _cmd_preset(args) -> int:
    from . import relaxation

    try:
        if args.name == "bfv":
            res = relaxation.preset_bfv_stability(args.eta, args.n, args.T, args.seed)
            summary = {
                "preset": "bfv",
                "decay_rate": res.fit.rate,
                "r2": res.fit.r2,
                "window": list(res.fit.window),
                "max_deviation_l2": res.max_deviation_l2,
                "max_p0_b2": res.max_p0_b2,
                "eta": res.eta,
            }
            line = (
                f"bfv stability: rate={res.fit.rate:.4f} r2={res.fit.r2:.6f} "
                f"max|B-e1|={res.max_deviation_l2:.3e} max|P0 B2|={res.max_p0_b2:.3e}"
            )
            records = res.records
        elif args.name == "rearrange":
            res = relaxation.preset_rearrangement(args.eta, args.n, args.T, args.seed)
            summary = {
                "preset": "rearrange",
                "rel_error": res.rel_error,
                "levelset_drift_half": res.drift_half,
                "levelset_drift_max": res.drift_max,
            }
            line = (
                f"rearrangement: rel_error={res.rel_error:.4%} "
                f"drift(T/2)={res.drift_half:.4%}"
            )
            records = res.records
        elif args.name == "relax":
            res = relaxation.preset_velocity_relaxation(
                gamma=args.gamma, alpha_list=tuple(args.alpha), n=args.n,
                T=args.T, seed=args.seed,
            )
            summary = {"preset": "relax", "table": {str(k): v for k, v in res.table.items()}}
            parts = [f"H^{a:g}: ratio={v['ratio']:.4f}" for a, v in res.table.items()]
            line = "velocity relaxation: " + ", ".join(parts)
            records = res.records
        else:  # helicity
            res = relaxation.preset_topology_witness(
                gamma=args.gamma, n=args.n, T=args.T, seed=args.seed
            )
            summary = {
                "preset": "helicity",
                "helicity_initial": res.helicity_initial,
                "helicity_final": res.helicity_final,
                "drift": res.drift,
            }
            line = (
                f"helicity witness: H0={res.helicity_initial:.6e} "
                f"drift={res.drift:.3e}"
            )
            records = res.records
    except BlowUpError as exc:
        return _fail("blowup", str(exc))

    try:
        _write_preset_outputs(
            args, records, summary,
            {"preset": args.name, "n": args.n, "T": args.T, "seed": args.seed},
            args.seed,
        )
    except LockHeldError as exc:
        return _fail("lock", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    print(line)
    return 0


def _cmd_lagrange_check(args) -> int:
    from .lagrangian import cauchy_transport_residual, run_with_flow_map

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        return _fail("config", str(exc))
    try:
        state, flow, B0 = run_with_flow_map(config, args.particles)
    except (BlowUpError, ValueError) as exc:
        return _fail("blowup", str(exc))
    residual = cauchy_transport_residual(state.B, flow, B0)
    det_err = float(np.abs(flow.det - 1.0).max())
    print(f"cauchy_residual={residual:.6e}")
    print(f"max_det_deviation={det_err:.6e}")
    print(f"smallness_integral={flow.smallness:.6e}")
    return 0


def _cmd_norms(args) -> int:
    try:
        fields, meta = read_snapshot(args.snapshot)
    except SnapshotError as exc:
        return _fail("io", str(exc))
    grid = Grid(meta["d"], meta["n"])
    print(f"snapshot: d={meta['d']} n={meta['n']} t={meta['t']:g} gamma={meta['gamma']:g}")
    header = f"{'field':>6} {'lp_1':>12} {'lp_2':>12} {'lp_4':>12} {'lp_inf':>12} " \
             f"{'Hdot1':>12} {'H1':>12} {'B^0.5_22':>12}"
    print(header)
    for idx, samples in enumerate(fields):
        f = transform(grid, samples)
        vals = [
            analysis.lp_norm(f, 1), analysis.lp_norm(f, 2), analysis.lp_norm(f, 4),
            analysis.lp_norm(f, math.inf),
            analysis.sobolev_norm(f, 1.0), analysis.sobolev_norm(f, 1.0, homogeneous=False),
            analysis.besov_norm(f, 0.5, 2, 2),
        ]
        print(f"{idx:>6} " + " ".join(f"{v:12.6g}" for v in vals))
    return 0


def _cmd_oracle(args) -> int:
    from .dft_oracle import run_oracle_suite

    try:
        errors = run_oracle_suite(op=args.op, n=args.n, d=args.d)
    except ValueError as exc:
        return _fail("usage", str(exc))
    worst = 0.0
    for name, err in sorted(errors.items()):
        print(f"{name:<28} max_error={err:.3e}")
        worst = max(worst, err)
    if worst > 1e-12:
        return _fail("oracle", f"worst oracle deviation {worst:.3e} exceeds 1e-12")
    print(f"oracle suite passed: worst deviation {worst:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mre-lab",
        description="Pseudo-spectral magnetic relaxation experiments on the torus",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config-driven simulation")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=_cmd_run)

    p_preset = sub.add_parser("preset", help="run a canned experiment")
    p_preset.add_argument("name", choices=["bfv", "rearrange", "relax", "helicity"])
    p_preset.add_argument("--out", required=True)
    p_preset.add_argument("--eta", type=float, default=0.01)
    p_preset.add_argument("--n", type=int, default=64)
    p_preset.add_argument("--T", type=float, default=None)
    p_preset.add_argument("--seed", type=int, default=0)
    p_preset.add_argument("--gamma", type=float, default=None)
    p_preset.add_argument("--alpha", type=float, nargs="+", default=[1.0])
    p_preset.set_defaults(func=_cmd_preset)

    p_lag = sub.add_parser("lagrange-check", help="transport-identity residual")
    p_lag.add_argument("--config", required=True)
    p_lag.add_argument("--particles", type=int, default=16)
    p_lag.set_defaults(func=_cmd_lagrange_check)

    p_norms = sub.add_parser("norms", help="norm table of a snapshot")
    p_norms.add_argument("--snapshot", required=True)
    p_norms.set_defaults(func=_cmd_norms)

    p_oracle = sub.add_parser("oracle", help="direct-DFT operator comparisons")
    p_oracle.add_argument("--op", default="all")
    p_oracle.add_argument("--n", type=int, default=8)
    p_oracle.add_argument("--d", type=int, default=2)
    p_oracle.set_defaults(func=_cmd_oracle)
    return parser


_PRESET_DEFAULTS = {
    "bfv": {"T": 10.0, "gamma": 0.0, "n": 64},
    "rearrange": {"T": 40.0, "gamma": 0.0, "n": 64},
    "relax": {"T": 20.0, "gamma": 2.5, "n": 64},
    "helicity": {"T": 1.0, "gamma": 3.0, "n": 32},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "preset":
        defaults = _PRESET_DEFAULTS[args.name]
        if args.T is None:
            args.T = defaults["T"]
        if args.gamma is None:
            args.gamma = defaults["gamma"]
        if args.name == "helicity" and args.n == 64:
            args.n = defaults["n"]
    try:
        return args.func(args)
    except Exception as exc:  # last-resort guard: keep the error line parseable
        return _fail("internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
