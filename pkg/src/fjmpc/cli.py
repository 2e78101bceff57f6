"""Command-line entry point: ``fjmpc <subcommand> ...``.

Failures print a single ``error: <Kind>: <message>`` line on stderr and exit
with status 1 (status 2 for usage errors, as argparse does).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import fj_equilibrium, forced_equilibrium
from .budget import BudgetLedger
from .config import POLICIES, parse_config, parse_sweep, serialize_config
from .dynamics import IncentiveInput, simulate_trajectory
from .errors import FjmpcError
from .network import validate_network
from .policy import RunResult, make_estimator, summarize_run
from .report import RunRecord, emit_report, fmt, load_records, summary_table
from .sweep import CellOutcome, default_jobs, run_single, run_sweep, write_manifest

log = logging.getLogger("fjmpc")


def _load(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    net = cfg.build_network()
    report = validate_network(net)
    print(f"config ok: {args.config} (n={net.n_agents}, T={cfg.model.T}, beta={fmt(cfg.model.beta)})")
    print(report)
    if not report.ok:
        raise FjmpcError(f"{len(report.violations)} network invariant(s) violated")
    return 0


def cmd_simulate(args) -> int:
    """Open-loop run with constant inputs (zero by default)."""
    cfg = _load(args)
    net = cfg.build_network()
    kernel = cfg.memory_kernel()
    n = net.n_agents
    inp = IncentiveInput(np.full(n, args.u_s), np.full(n, args.u_l))
    ledger = BudgetLedger(float("inf") if args.unbudgeted else cfg.model.beta, cfg.model.alpha)
    start = time.perf_counter()
    traj = simulate_trajectory(net, kernel, lambda state, mu: inp, cfg.model.T, ledger=ledger,
                               seed=cfg.seed, x0=cfg.initial_state(n),
                               estimator=make_estimator(cfg.estimator.kind, cfg.estimator.decay))
    summary = summarize_run(traj, ledger, policy="open_loop")
    rec = RunRecord("open_loop", cfg.model.alpha, cfg.model.rho, ledger.beta, cfg.seed, "open_loop",
                    summary=summary, result=RunResult(traj, ledger, summary))
    out = Path(cfg.output)
    emit_report([rec], out)
    rec.result = None
    write_manifest(out, cfg, None, [CellOutcome(rec, {"u_s": args.u_s, "u_l": args.u_l}, time.perf_counter() - start)],
                   time.perf_counter() - start)
    print(summary_table([rec]), end="")
    return 0


def cmd_design(args) -> int:
    cfg = _load(args)
    rec = run_single(cfg, args.policy, out=cfg.output, dump_qp=args.dump_qp)
    print(summary_table([rec]), end="")
    if rec.status != "ok":
        raise FjmpcError(f"run {rec.run_dir} failed (see {Path(cfg.output) / 'manifest.json'})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    spec = parse_sweep(args.sweepspec)
    jobs = default_jobs() if args.jobs is None else args.jobs
    records = run_sweep(spec, cfg, out=cfg.output, jobs=jobs, dump_qp=args.dump_qp)
    print(summary_table(records), end="")
    failed = [r.run_dir for r in records if r.status != "ok"]
    if failed:
        raise FjmpcError(f"{len(failed)} of {len(records)} cells failed: {', '.join(failed)}")
    return 0


def cmd_equilibrium(args) -> int:
    """Unforced limit, plus the forced limit when constant inputs are given."""
    cfg = _load(args)
    net = cfg.build_network()
    free = fj_equilibrium(net, net.inherent_bias)
    forced = None
    if args.u_s is not None or args.u_l is not None:
        forced = forced_equilibrium(net, net.persistence_weight, args.u_s or 0.0, args.u_l or 0.0)
    buf = io.StringIO()
    if args.format == "csv":
        w = csv.writer(buf, lineterminator="\n")
        header = ["agent_id", "x_inf", "u_inf"]
        if forced is not None:
            header += ["x_inf_forced", "u_inf_forced"]
        w.writerow(header)
        for v in range(net.n_agents):
            row = [v, fmt(free.x_inf[v]), fmt(free.u_inf[v])]
            if forced is not None:
                row += [fmt(forced.x_inf[v]), fmt(forced.u_inf[v])]
            w.writerow(row)
    else:
        for label, res in (("unforced", free), ("forced", forced)):
            if res is None:
                continue
            buf.write(f"{label}: mean x_inf={res.x_inf.mean():.6f} std={res.x_inf.std():.6f} "
                      f"min={res.x_inf.min():.6f} max={res.x_inf.max():.6f} "
                      f"mean u_inf={res.u_inf.mean():.6f} residual={res.residual:.3e}\n")
    if args.out is not None:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"equilibrium.{'csv' if args.format == 'csv' else 'txt'}").write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    return 0


def cmd_report(args) -> int:
    records = load_records(args.run_dir)
    out = Path(args.out) if args.out is not None else Path(args.run_dir)
    emit_report(records, out, write_runs=False)
    print(summary_table(records), end="")
    return 0


def cmd_show_config(args) -> int:
    print(serialize_config(_load(args)), end="")
    return 0


def _global_flags(default) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    Subcommand copies use ``SUPPRESS`` so they do not reset values given
    before the subcommand name.
    """
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    g.add_argument("--out", default=default, help="output directory (overrides the config)")
    g.add_argument("--jobs", type=int, default=default, help="parallel sweep workers (default: CPU count)")
    g.add_argument("--dump-qp", action="store_true", default=default if default is not None else False,
                   help="write every MPC problem as MatrixMarket files")
    g.add_argument("-v", "--verbose", action="count", default=default if default is not None else 0)
    g.add_argument("-q", "--quiet", action="store_true", default=default if default is not None else False)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="fjmpc", parents=[_global_flags(None)],
                                description="Incentive design for opinion dynamics with memory.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("validate", parents=[common], help="check a config and its network")
    s.add_argument("config")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", parents=[common], help="open-loop run with constant inputs")
    s.add_argument("config")
    s.add_argument("--u-s", type=float, default=0.0, help="constant short-term input")
    s.add_argument("--u-l", type=float, default=0.0, help="constant long-term input")
    s.add_argument("--unbudgeted", action="store_true", help="ignore the budget")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("design", parents=[common], help="closed-loop run with one policy")
    s.add_argument("config")
    s.add_argument("--policy", choices=POLICIES, required=True)
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("sweep", parents=[common], help="Cartesian parameter sweep")
    s.add_argument("config")
    s.add_argument("sweepspec")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("equilibrium", parents=[common], help="limit inclinations")
    s.add_argument("config")
    s.add_argument("--u-s", type=float, default=None, help="constant short-term input for the forced limit")
    s.add_argument("--u-l", type=float, default=None, help="constant long-term input for the forced limit")
    s.add_argument("--format", choices=("text", "csv"), default="text")
    s.set_defaults(func=cmd_equilibrium)

    s = sub.add_parser("report", parents=[common], help="rebuild the summary table of a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("show-config", parents=[common], help="print the config with defaults applied")
    s.add_argument("config")
    s.set_defaults(func=cmd_show_config)
    return p


def _configure_logging(args):
    level = logging.ERROR if args.quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return args.func(args)
    except (FjmpcError, OSError, ValueError, yaml.YAMLError) as exc:
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ").strip()
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
