"""Command-line interface.

Subcommands: infield | scan | decay | fit | levels | validate.  Exit codes:
0 success, 1 validation/configuration failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FitError,
    fit_decaying_sinusoid,
    fit_exponential_decay,
    fit_resonance_peak,
)
from .config import ConfigError, from_mapping, load_config
from .observables import AlignmentTrace
from .runner import (
    run_levels,
    run_scenario,
    run_validate,
    write_csv,
    write_record,
    write_outputs,
)

_RUN_COMMANDS = ("infield", "scan", "decay")


def _add_common(parser):
    parser.add_argument("--config", metavar="PATH", help="run configuration file")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    parser.add_argument(
        "--format", choices=("csv",), default="csv", help="output table format"
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spindrop",
        description="Simulate and analyze slow-centrifuge-driven molecular "
        "rotation in a dissipative environment.",
    )
    parser.add_argument("--version", action="version", version=f"spindrop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (
        ("infield", "forced-rotation trace during the pulse"),
        ("scan", "alignment versus rotation frequency at a fixed probe delay"),
        ("decay", "long-delay resonant run plus non-rotating reference"),
    ):
        p = sub.add_parser(name, help=blurb)
        _add_common(p)
        p.add_argument("--workers", type=int, default=None, metavar="N",
                       help="worker threads for independent points")
        p.add_argument("--plot", action="store_true",
                       help="render figures next to the CSV output")
        p.add_argument("--plot-data", action="store_true",
                       help="write long-format plot_data.csv")

    p = sub.add_parser("fit", help="fit a trace or scan CSV")
    _add_common(p)
    p.add_argument("--input", required=True, metavar="CSV", help="input table")
    p.add_argument("--model", choices=("sinusoid", "decay", "peak"),
                   default="sinusoid")
    p.add_argument("--t-min", type=float, default=None, metavar="PS")
    p.add_argument("--t-max", type=float, default=None, metavar="PS")

    p = sub.add_parser("levels", help="print the level scheme as CSV")
    _add_common(p)

    p = sub.add_parser("validate", help="run the diagnostics suite")
    _add_common(p)

    return parser


def _load(args, default_scenario=None):
    if args.config:
        config = load_config(args.config)
    elif default_scenario is not None:
        config = from_mapping({"scenario": default_scenario})
    else:
        config = from_mapping({"scenario": "infield"})
    allowed = {default_scenario}
    if default_scenario == "infield":
        # a standalone non-rotating reference runs through the trace path
        allowed.add("adiabatic-reference")
    if default_scenario is not None and config.scenario not in allowed:
        raise ConfigError(
            f"config scenario {config.scenario!r} does not match "
            f"subcommand {default_scenario!r}"
        )
    if args.seed is not None:
        values = dict(config.values)
        values["seed"] = args.seed
        config = type(config)(values)
    return config


def _read_table(path):
    rows = np.genfromtxt(path, delimiter=",", names=True)
    names = rows.dtype.names
    if names is None or len(names) < 2:
        raise ConfigError(f"{path}: expected a CSV header")
    return rows, names


def _cmd_run(args):
    config = _load(args, default_scenario=args.command)
    result = run_scenario(config, workers=args.workers)
    out = Path(args.out) if args.out else Path(f"spindrop-{args.command}")
    written = write_outputs(result, out, plot=args.plot, plot_data=args.plot_data)
    for path in written:
        print(path)
    return 0


def _cmd_fit(args):
    rows, names = _read_table(args.input)
    out_record = {}
    if args.model == "peak":
        x = rows[names[0]]
        y = rows[names[1]]
        se = rows[names[2]] if len(names) > 2 else None
        fit = fit_resonance_peak(x, y, se)
        out_record = {
            "fit_model": f"peak-{fit.model}",
            "peak_center_ghz": fit.center_ghz,
            "peak_center_ghz_stderr": fit.error("center_ghz"),
            "peak_fwhm_ghz": fit.width_ghz,
            "peak_height": fit.height,
            "peak_baseline": fit.baseline,
            "peak_bracketed": fit.bracketed,
            "rms_residual": fit.rms_residual,
            "converged": fit.converged,
        }
    else:
        trace = AlignmentTrace(
            rows[names[0]], rows[names[1]],
            rows[names[2]] if len(names) > 2 else np.zeros(rows[names[0]].size),
        )
        if args.model == "sinusoid":
            fit = fit_decaying_sinusoid(trace, t_min=args.t_min, t_max=args.t_max)
            out_record = {
                "fit_model": "decaying-sinusoid",
                "oscillation_detected": fit.oscillation_detected,
                "frequency_ghz": fit.frequency_ghz,
                "amplitude": fit.amplitude,
                "offset": fit.offset,
                "phase_rad": fit.phase,
                "damping_ps": fit.damping_ps,
                "rms_residual": fit.rms_residual,
                "converged": fit.converged,
            }
            if fit.oscillation_detected:
                out_record["frequency_ghz_stderr"] = fit.error("frequency_ghz")
        else:
            fit = fit_exponential_decay(trace, t_min=args.t_min, t_max=args.t_max)
            out_record = {
                "fit_model": "fixed-asymptote-exponential",
                "amplitude": fit.amplitude,
                "amplitude_stderr": fit.amplitude_err,
                "tau_ps": fit.tau_ps,
                "tau_ps_stderr": fit.tau_err,
                "tau_resolved": fit.tau_resolved,
                "offset_fixed": fit.offset,
                "rms_residual": fit.rms_residual,
                "converged": fit.converged,
            }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_record(out / "fit.txt", out_record)
        print(out / "fit.txt")
    else:
        for k, v in out_record.items():
            print(f"{k} = {v}")
    return 0


def _cmd_levels(args):
    config = _load(args)
    rows = run_levels(config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(
            out / "levels.csv", ("J", "K", "E_cm1", "f_res_GHz"),
            tuple(np.array(col) for col in zip(*rows)),
        )
        print(out / "levels.csv")
    else:
        print("J,K,E_cm1,f_res_GHz")
        for j, k, e, f in rows:
            print(f"{j},{k},{e:.12g},{f:.12g}")
    return 0


def _cmd_validate(args):
    config = _load(args)
    checks = run_validate(config)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}")
        failed += 0 if check.passed else 1
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in _RUN_COMMANDS:
            return _cmd_run(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "levels":
            return _cmd_levels(args)
        if args.command == "validate":
            return _cmd_validate(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, FitError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
