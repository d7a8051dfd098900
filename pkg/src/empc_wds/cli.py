"""Command-line entry point: ``empc-wds simulate|sweep|validate``.

Exit codes: 0 success, 2 scenario validation error, 3 infeasible run, 1 other.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import EmpcWdsError, ScenarioValidationError
from .export import (summary_row, write_metrics_json, write_summary, write_trace_csv,
                     write_trace_jsonl)
from .harness import CONTROLLERS, compare, run_closed_loop
from .scenario import bundled_scenario_path, load_scenario, to_config

EXIT_OK, EXIT_OTHER, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_DEMANDS = (5.0, 15.0, 25.0, 35.0, 45.0, 55.0)
OUT_ENV = "EMPC_WDS_OUT"

log = logging.getLogger("empc_wds")


def _demand_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("demand list is empty")
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("demands must be >= 0 L/s")
    return values


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="empc-wds",
        description="Economic MPC vs trigger-level pump scheduling on a tank-fed network.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", type=Path, default=None,
                        help="scenario file (default: bundled richmond_pruned.scn)")
        if out:
            sp.add_argument("--out", type=Path, default=Path("out"),
                            help=f"output directory (env {OUT_ENV} overrides)")
            sp.add_argument("--seed", type=_seed, default=None,
                            help="seed for generated demand profiles")

    s = sub.add_parser("simulate", help="run one closed-loop simulation")
    common(s)
    s.add_argument("--controller", choices=CONTROLLERS, default=None)
    s.add_argument("--demand", type=_demand_list, default=None,
                   help="base demand override in L/s (first value is used)")

    w = sub.add_parser("sweep", help="run EMPC and trigger control over a list of demands")
    common(w)
    w.add_argument("--demand", type=_demand_list, default=list(DEFAULT_DEMANDS),
                   help="comma-separated base demands in L/s (default 5,15,25,35,45,55)")
    w.add_argument("--jobs", type=int, default=1, help="concurrent cases (default 1)")

    v = sub.add_parser("validate", help="check a scenario file")
    common(v, out=False)
    return p


def _out_dir(args) -> Path:
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else args.out


def _scenario_path(args) -> Path:
    return args.scenario if args.scenario is not None else bundled_scenario_path()


def _report_invalid(path, exc: ScenarioValidationError):
    print(f"{path}: invalid scenario", file=sys.stderr)
    for field, line, msg in exc.problems:
        where = f" (line {line})" if line is not None else ""
        print(f"  {field}{where}: {msg}", file=sys.stderr)


def _write_run(result, case_dir: Path, extra=None):
    case_dir.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, case_dir / "trace.csv")
    write_trace_jsonl(result.trace, case_dir / "trace.jsonl")
    write_metrics_json(result.metrics, case_dir / "metrics.json", extra)


def cmd_simulate(args) -> int:
    path = _scenario_path(args)
    doc = load_scenario(path)
    demand = args.demand[0] if args.demand else None
    cfg = to_config(doc, args.controller, demand, args.seed)
    out = _out_dir(args)
    log.info("simulating %s (%s, %.6g L/s) -> %s", path, cfg.controller,
             cfg.model.demand.base_demand_m3s * 1e3, out)
    result = run_closed_loop(cfg)
    _write_run(result, out, {"controller": cfg.controller,
                             "base_demand_lps": cfg.model.demand.base_demand_m3s * 1e3})
    m = result.metrics
    if m.failed:
        print(f"infeasible: {m.failure}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"ok: {cfg.controller} cost £{m.total_cost_pounds:.2f}, "
          f"volume {m.total_volume_m3:.1f} m3, outputs in {out}")
    return EXIT_OK


def _run_case(doc, controller, demand, seed, case_dir):
    """Worker for one sweep case; returns (metrics, error message)."""
    try:
        result = run_closed_loop(to_config(doc, controller, demand, seed))
        _write_run(result, Path(case_dir), {"controller": controller, "base_demand_lps": demand})
        return result.metrics, None
    except EmpcWdsError as exc:
        return None, str(exc)


def _case_dir(out, demand, controller) -> Path:
    return out / f"d{demand:g}_lps" / controller


def cmd_sweep(args) -> int:
    doc = load_scenario(_scenario_path(args))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    cases = [(d, c) for d in args.demand for c in CONTROLLERS]
    jobs = max(1, args.jobs)
    work = [(doc, c, d, args.seed, str(_case_dir(out, d, c))) for d, c in cases]
    if jobs == 1:
        results = [_run_case(*w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_case, *zip(*work)))
    by_case = dict(zip(cases, results))

    rows = []
    for d in args.demand:
        (me, ee), (mt, et) = by_case[(d, "empc")], by_case[(d, "trigger")]
        ratio = None
        if me is not None and mt is not None and not me.failed:
            ratio = compare(me, mt).cost_ratio
        rows.append(summary_row(d, "empc", me, ratio, ee))
        rows.append(summary_row(d, "trigger", mt, ratio, et))
        log.info("d=%g L/s: ratio %s", d, ratio)
    path = write_summary(rows, out)
    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        print(f"d={r['base_demand_lps']:g} L/s {r['controller']}: {r['status']}: "
              f"{r['failure']}", file=sys.stderr)
    print(f"{len(rows)} runs, {len(bad)} not ok; summary in {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = _scenario_path(args)
    doc = load_scenario(path)
    print(f"{path}: ok (scenario {doc.name!r})")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioValidationError as exc:
        _report_invalid(_scenario_path(args), exc)
        return EXIT_INVALID
    except (OSError, EmpcWdsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
