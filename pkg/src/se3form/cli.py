"""Command-line interface.

Subcommands: run a scenario, verify a recorded trace offline, sweep a
scenario over many seeds, and pretty-print a summary.  Exit codes: 0 on
success with zero violations, 2 for configuration/validation problems,
3 for funnel violations, 4 for I/O failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import verify as vf
from .errors import FormationError, FunnelViolation, ParseError
from .sim import load_scenario, run, sweep, trace_from_csv

log = logging.getLogger("se3form")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_VIOLATION = 3
EXIT_IO = 4


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO, "quiet": logging.ERROR}.get(
        os.environ.get("FORMATION_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _write(path, text: str) -> None:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise ParseError(f"cannot write {path}: {exc}") from exc


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    out_dir = args.out
    trace_path = os.path.join(out_dir, "trace.csv")
    summary_path = os.path.join(out_dir, "summary.json")
    try:
        trace, summary = run(scenario, dt=args.dt, t_end=args.t_end)
    except FunnelViolation as exc:
        os.makedirs(out_dir, exist_ok=True)
        exc.partial_trace.to_csv(trace_path)
        _write(summary_path, json.dumps(exc.partial_summary, indent=2))
        print(f"FUNNEL VIOLATION: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    os.makedirs(out_dir, exist_ok=True)
    trace.to_csv(trace_path)
    _write(summary_path, json.dumps(summary, indent=2))
    print(f"ok: {summary['rows']} rows -> {trace_path} ({summary['runtime_s']:.2f}s)")
    return EXIT_OK


def _cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    trace = trace_from_csv(args.trace)
    report = vf.check_funnels(trace, scenario)
    dyn = vf.check_error_dynamics(trace, scenario) if trace.n_rows >= 3 else None
    if args.out:
        payload = report.as_dict()
        if dyn is not None:
            payload["error_dynamics"] = {
                "max_residual": dyn["max_residual"],
                "tolerance": dyn["tolerance"],
            }
        _write(args.out, json.dumps(payload, indent=2))
    if not report.ok:
        for rec in report.records[:20]:
            print(
                f"VIOLATION {rec.kind} at {rec.where}, t={rec.time:.6g}: "
                f"observed {rec.observed:.12g} vs bound {rec.bound:.12g}",
                file=sys.stderr,
            )
        print(f"{len(report.records)} violation(s) found", file=sys.stderr)
        return EXIT_VIOLATION
    msg = f"ok: {trace.n_rows} rows, all funnel/distance invariants hold"
    if dyn is not None:
        msg += f"; error-dynamics residual {dyn['max_residual']:.3e} (tol {dyn['tolerance']:.3e})"
    print(msg)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    try:
        with open(args.scenario, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {args.scenario}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{args.scenario} is not valid JSON: {exc}") from exc
    aggregate, summaries = sweep(raw, args.seeds, base_seed=args.base_seed,
                                 dt=args.dt, t_end=args.t_end, n_jobs=args.jobs)
    if args.out:
        _write(args.out, json.dumps({"aggregate": aggregate, "runs": summaries}, indent=2))
    print(f"{aggregate['passed']}/{aggregate['total']} pass")
    for failure in aggregate["failures"]:
        print(f"  seed {failure['seed']}: {failure['reason']}", file=sys.stderr)
    return EXIT_OK if aggregate["passed"] == aggregate["total"] else EXIT_VIOLATION


def _cmd_report(args) -> int:
    try:
        with open(args.summary, "r", encoding="utf-8") as fh:
            s = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {args.summary}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{args.summary} is not valid JSON: {exc}") from exc
    print(f"scenario : {s['name']} (seed {s['seed']}, digest {s['scenario_digest'][:12]})")
    print(f"grid     : dt={s['dt']} s, t_end={s['t_end']} s, {s['rows']} rows")
    print(f"outcome  : {s['violations']} violation(s), {s['rotation_repairs']} repairs, "
          f"max drift {s['max_rotation_defect']:.2e}, {s['runtime_s']:.2f}s wall")
    if s.get("violation"):
        print(f"aborted  : {s['violation']}")
    hdr = f"{'edge':>8} {'dist min':>10} {'dist max':>10} {'e final':>12} {'psi final':>12} {'margin e':>10} {'margin psi':>10}"
    print(hdr)
    for e in s["edges"]:
        print(
            f"{e['edge'][0]:>4}-{e['edge'][1]:<3} {e['dist_min']:>10.4f} {e['dist_max']:>10.4f} "
            f"{e['e_final']:>12.5g} {e['psi_final']:>12.5g} "
            f"{e['margin_e_min']:>10.4g} {e['margin_psi_min']:>10.4g}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="se3form",
        description="Formation control of rigid bodies in SE(3) under performance funnels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write trace.csv + summary.json")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=".", help="output directory (default: .)")
    p_run.add_argument("--dt", type=float, default=None)
    p_run.add_argument("--t-end", type=float, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_ver = sub.add_parser("verify", help="re-check all invariants of a recorded trace")
    p_ver.add_argument("trace")
    p_ver.add_argument("scenario")
    p_ver.add_argument("--out", default=None, help="write the violation report JSON here")
    p_ver.set_defaults(func=_cmd_verify)

    p_sw = sub.add_parser("sweep", help="run a scenario under many seeds")
    p_sw.add_argument("scenario")
    p_sw.add_argument("--seeds", type=int, required=True)
    p_sw.add_argument("--base-seed", type=int, default=None)
    p_sw.add_argument("--dt", type=float, default=None)
    p_sw.add_argument("--t-end", type=float, default=None)
    p_sw.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    p_sw.add_argument("--out", default=None, help="write aggregate + per-run summaries here")
    p_sw.set_defaults(func=_cmd_sweep)

    p_rep = sub.add_parser("report", help="human-readable table from a summary.json")
    p_rep.add_argument("summary")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def cli(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FunnelViolation as exc:
        print(f"FUNNEL VIOLATION: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        # unreadable/unwritable files are I/O failures; malformed content is
        # a configuration problem
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_VALIDATION
    except FormationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
