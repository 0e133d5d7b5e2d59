"""Command-line entry points.

Batch-oriented by design: every command reads a JSON scenario, writes files
under an output directory, and communicates success through its exit code —
stdout is for humans, files are the data channel.

Exit codes: 0 success; 1 a verification failed (hypothesis item, martingale
z-test); 2 invalid input (bad scenario, bad flags); 3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .admissibility import SampleSpec, validate_hypotheses
from .engine import convergence_study, run_ensemble, write_run
from .errors import FwdVolError, NumericalBlowup, ScenarioError
from .params import build_model, load_scenario
from .pricing import bs_price

__all__ = ["main"]


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_params(args, **extra):
    return load_scenario(
        args.scenario, seed=args.seed, n_paths=args.paths, dt=args.dt, **extra
    )


def _out_dir(args, params) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path("runs") / params.params_hash()[:12]


def _cmd_simulate(args) -> int:
    params = _load_params(args)
    result = run_ensemble(params, workers=args.workers)
    out = _out_dir(args, params)
    written = write_run(result, out)
    _say(args, f"simulated {result.n_paths} paths ({params.n_steps} steps, "
               f"dt={params.dt:g}) -> {out}")
    stats = result.stats()
    _say(args, f"martingale checks: {'pass' if stats['martingale_pass'] else 'FAIL'}; "
               f"positivity: {'pass' if stats['positivity']['pass'] else 'FAIL'}")
    for name in sorted(written):
        _say(args, f"  wrote {written[name]}")
    excluded = result.excluded_paths()
    if excluded:
        _say(args, f"WARNING: {len(excluded)} path(s) diverged: {excluded[:10]}")
        return 3
    return 0


def _cmd_verify_hypotheses(args) -> int:
    params = _load_params(args)
    model = build_model(params.volvol)
    spec = SampleSpec(n_samples=args.samples) if args.samples else SampleSpec()
    report = validate_hypotheses(model, spec)
    for item in report.items:
        mark = "ok  " if item.passed else "FAIL"
        _say(args, f"[{mark}] {item.name}: {item.detail}")
        if item.witness:
            _say(args, f"       witness: {item.witness}")
    if args.out is not None:
        _dump_json(report.to_json_dict(), Path(args.out) / "validation.json")
        _say(args, f"wrote {Path(args.out) / 'validation.json'}")
    _say(args, f"{report.model}: {'all items pass' if report.passed else 'FAILED'} "
               f"({report.n_samples} samples)")
    return 0 if report.passed else 1


def _cmd_martingale_test(args) -> int:
    params = _load_params(args)
    result = run_ensemble(params, workers=args.workers)
    report = result.martingale_report()
    for t in report.tests:
        z = "n/a" if t.z is None else f"{t.z:+.3f}"
        mark = "ok  " if t.passed else "FAIL"
        _say(args, f"[{mark}] {t.quantity} at t={t.t:g}: mean={t.mean:.6g} "
                   f"ref={t.reference:.6g} z={z}")
    _say(args, report.note)
    if args.out is not None:
        out = Path(args.out)
        _dump_json(report.to_json_dict(), out / "martingale.json")
        report.to_csv(out / "martingale.csv")
        _say(args, f"wrote {out / 'martingale.json'} and {out / 'martingale.csv'}")
    if result.excluded_paths():
        _say(args, f"WARNING: diverged paths {result.excluded_paths()[:10]}")
        return 3
    return 0 if report.passed else 1


def _cmd_convergence(args) -> int:
    params = load_scenario(args.scenario, seed=args.seed, dt=args.dt)
    report = convergence_study(params, n_paths=args.paths)
    _say(args, f"dt levels: {[f'{d:g}' for d in report.dts]}")
    _say(args, f"total-variance gap: {[f'{e:.3e}' for e in report.xi_gap]} "
               f"(slope {report.xi_slope if report.xi_slope is None else round(report.xi_slope, 3)})")
    _say(args, f"spot error vs finest: {[f'{e:.3e}' for e in report.spot_errors]} "
               f"(slope {report.spot_slope if report.spot_slope is None else round(report.spot_slope, 3)})")
    _say(args, f"curve error vs finest: {[f'{e:.3e}' for e in report.curve_errors]} "
               f"(slope {report.curve_slope if report.curve_slope is None else round(report.curve_slope, 3)})")
    if args.out is not None:
        _dump_json(report.to_json_dict(), Path(args.out) / "convergence.json")
        _say(args, f"wrote {Path(args.out) / 'convergence.json'}")
    return 0


def _cmd_price(args) -> int:
    price = bs_price(args.spot, args.sigma, args.strike, args.tau)
    print(repr(price))
    return 0


def _add_scenario_flags(sub, *, workers=False):
    sub.add_argument("--scenario", required=True, help="scenario JSON file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the seed")
    sub.add_argument("--paths", type=int, default=None, help="override the path count")
    sub.add_argument("--dt", type=float, default=None, help="override the step size")
    sub.add_argument("--quiet", action="store_true", help="suppress stdout chatter")
    if workers:
        sub.add_argument("--workers", type=int, default=1,
                         help="worker processes (throughput only; outputs identical)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwdvol",
        description="Forward implied-variance curve simulator and verifiers.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="run an ensemble and write stats")
    _add_scenario_flags(sim, workers=True)
    sim.set_defaults(func=_cmd_simulate)

    ver = subs.add_parser(
        "verify-hypotheses",
        help="run the admissibility checks on the scenario's vol-of-vol model",
    )
    _add_scenario_flags(ver)
    ver.add_argument("--samples", type=int, default=None,
                     help="number of random states to sample")
    ver.set_defaults(func=_cmd_verify_hypotheses)

    mar = subs.add_parser("martingale-test",
                          help="checkpoint z-tests of spot and call means")
    _add_scenario_flags(mar, workers=True)
    mar.set_defaults(func=_cmd_martingale_test)

    conv = subs.add_parser("convergence", help="coupled-noise dt refinement study")
    _add_scenario_flags(conv)
    conv.set_defaults(func=_cmd_convergence)

    price = subs.add_parser("price", help="one Black-Scholes evaluation")
    price.add_argument("--spot", type=float, required=True)
    price.add_argument("--strike", type=float, required=True)
    price.add_argument("--sigma", type=float, required=True)
    price.add_argument("--tau", type=float, required=True)
    price.set_defaults(func=_cmd_price)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalBlowup as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return 3
    except (ScenarioError, FwdVolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
