"""Command-line front end.

Subcommands::

    consensus-tracking validate  SCENARIO | --paper-scenario
    consensus-tracking solve     SCENARIO [--out gains.json]
    consensus-tracking simulate  SCENARIO [--out DIR] [--mode M] [--seed S] [--dt DT] [--horizon T]
    consensus-tracking compare   SCENARIO [--out DIR] [--seeds N] [--workers W]

Exit codes: 0 success, 1 usage or parse error, 2 validation failure,
3 solver failure, 4 simulation divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import InvalidModel, ScenarioParseError, SimulationError, SolverError
from .gain_synthesis import (
    compute_gains,
    eigenvalue_gap,
    printed_form_residuals,
    save_gains,
    solve_care,
)
from .scenario import builtin_scenario, load_scenario
from .simulation import MODES, monte_carlo, simulate, write_trace_csv
from .state_estimation import build_augmented, solve_filter_gain
from .system_model import check_observability, check_solvability, is_detectable

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_SOLVER, EXIT_DIVERGED = 0, 1, 2, 3, 4

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (np.isfinite(val) and val > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def _nonneg_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return val


def _positive_int(text):
    val = _nonneg_int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return val


def build_parser():
    parser = _Parser(prog="consensus-tracking",
                     description="Filter-based feedforward-feedback consensus tracking.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("scenario", nargs="?", help="scenario YAML file")
        p.add_argument("--paper-scenario", dest="builtin", action="store_true",
                       help="use the built-in two-state scenario")

    def add_run(p):
        p.add_argument("--seed", type=_nonneg_int, help="base RNG seed")
        p.add_argument("--dt", type=_positive_float, help="integration step [s]")
        p.add_argument("--horizon", type=_positive_float, help="horizon T [s]")
        p.add_argument("--measurement-noise", choices=("intensity", "sampled"))
        p.add_argument("--no-noise", action="store_true", help="switch every noise source off")
        p.add_argument("--stride", type=_positive_int, default=100,
                       help="record every N-th step (default 100)")

    p = sub.add_parser("validate", help="check existence and well-posedness conditions")
    add_common(p)

    p = sub.add_parser("solve", help="compute and store the gain set")
    add_common(p)
    p.add_argument("--out", default="gains.json", help="gain file to write")

    p = sub.add_parser("simulate", help="run one closed-loop simulation")
    add_common(p)
    add_run(p)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--mode", choices=MODES)

    p = sub.add_parser("compare", help="paired Monte Carlo comparison with plots")
    add_common(p)
    add_run(p)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seeds", type=_positive_int, help="number of paired replicas")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--no-plots", action="store_true")
    return parser


def _load(args, parser):
    if args.builtin == (args.scenario is not None):
        parser.error("give exactly one of SCENARIO or --paper-scenario")
    return builtin_scenario() if args.builtin else load_scenario(args.scenario)


def _run_config(sc, args):
    changes = {"record_stride": args.stride}
    for attr, key in (("seed", "seed"), ("dt", "dt"), ("horizon", "T"),
                      ("measurement_noise", "measurement_noise"), ("mode", "mode")):
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    if args.no_noise:
        changes["noise"] = False
    return replace(sc.sim, **changes)


def _fmt(ok):
    return "pass" if ok else "FAIL"


def cmd_validate(sc):
    plant, exo, cost = sc.plant, sc.exo, sc.cost
    solv = check_solvability(plant, cost)
    obs = check_observability(exo.F, exo.H)
    model = build_augmented(plant, exo)
    filt = is_detectable(model.Abar, model.Cbar)
    rows = [
        ("stabilizable (A, B1)", solv.stabilizable, ""),
        ("detectable (A, Q^1/2 C)", solv.detectable, ""),
        ("Q, R positive definite", solv.Q_positive_definite and solv.R_positive_definite, ""),
        ("observable (F, H)", obs.observable, f"rank {obs.rank}/{obs.n}"),
        ("filter detectable (Abar, Cbar)", filt, ""),
    ]
    if solv.ok:
        S = plant.B1 @ np.linalg.solve(cost.R, plant.B1.T)
        try:
            P = solve_care(plant.A, S, plant.C.T @ cost.Q @ plant.C, check=False)
            Acl = plant.A - S @ P
            gap = min(eigenvalue_gap(Acl, exo.F), eigenvalue_gap(Acl, exo.K))
            rows.append(("nonresonant spectra", gap > 1e-10, f"min gap {gap:.3e}"))
        except SolverError as exc:
            rows.append(("nonresonant spectra", False, f"Riccati solve failed: {exc}"))
    else:
        rows.append(("nonresonant spectra", False, "skipped, no Riccati solution"))
    width = max(len(r[0]) for r in rows)
    for name, ok, note in rows:
        print(f"{name:<{width}}  {_fmt(ok)}" + (f"  ({note})" if note else ""))
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_VALIDATION


def cmd_solve(sc, out):
    gains = compute_gains(sc.plant, sc.exo, sc.cost)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_gains(out, gains)
    for key in ("care", "reference", "disturbance"):
        print(f"residual {key}: {gains.residuals[key]:.3e}")
    for key, val in printed_form_residuals(gains, sc.plant, sc.exo, sc.cost).items():
        print(f"diagnostic {key}: " + ("n/a" if val is None else f"{val:.3e}"))
    print(f"wrote {out}")
    return EXIT_OK


def _synthesize(sc):
    gains = compute_gains(sc.plant, sc.exo, sc.cost)
    estimator = solve_filter_gain(build_augmented(sc.plant, sc.exo))
    return gains, estimator


def cmd_simulate(sc, config, out_dir):
    gains, estimator = _synthesize(sc)
    trace, report = simulate(sc.plant, sc.exo, gains, estimator, config, sc.cost)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"trace_{config.mode}_seed{config.seed}.csv"
    write_trace_csv(path, trace)
    print("mode, seed, J_realized, J_estimated")
    print(f"{config.mode}, {config.seed}, {report.J_realized:.9g}, {report.J_estimated:.9g}")
    return EXIT_OK


def cmd_compare(sc, config, out_dir, n_seeds, workers=1, plots=True):
    gains, estimator = _synthesize(sc)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = monte_carlo(sc.plant, sc.exo, gains, estimator, config, sc.cost,
                          n_seeds=n_seeds, modes=("kalman", "classic"), workers=workers)
    kal, cla = summary["kalman"], summary["classic"]
    path = out_dir / "compare.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "stream", "J_kalman", "J_classic",
                     "J_est_kalman", "J_est_classic", "kalman_wins"])
        for i in range(n_seeds):
            wr.writerow([config.seed, i, f"{kal.J_realized[i]:.17g}", f"{cla.J_realized[i]:.17g}",
                         f"{kal.J_estimated[i]:.17g}", f"{cla.J_estimated[i]:.17g}",
                         int(kal.J_realized[i] < cla.J_realized[i])])
    wins = int(np.sum(kal.J_realized < cla.J_realized))
    print(f"seeds: {n_seeds}")
    print(f"kalman  mean J_realized {kal.mean:.9g}  std {kal.std:.3g}")
    print(f"classic mean J_realized {cla.mean:.9g}  std {cla.std:.3g}")
    print(f"kalman wins {wins}/{n_seeds}")
    print(f"wrote {path}")
    if plots:
        from .plotting import plot_comparison

        traces = {}
        for mode in ("kalman", "classic"):
            traces[mode], _ = simulate(sc.plant, sc.exo, gains, estimator,
                                       replace(config, mode=mode, stream=0), sc.cost)
        files = plot_comparison(traces, out_dir)
        print(f"wrote {len(files)} plots to {out_dir}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc = _load(args, parser)
        if args.command == "validate":
            return cmd_validate(sc)
        if args.command == "solve":
            return cmd_solve(sc, args.out)
        config = _run_config(sc, args)
        if args.command == "simulate":
            return cmd_simulate(sc, config, args.out)
        return cmd_compare(sc, config, args.out, args.seeds or sc.seeds,
                           workers=args.workers, plots=not args.no_plots)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SimulationError as exc:
        print(f"simulation error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidModel, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
