"""Scenario execution and parameter sweeps with a hashed run manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .config import ScenarioConfig, SweepSpec, config_to_dict, sweep_to_dict
from .policy import CondensedMpc, run_naive, run_receding_horizon
from .report import RunRecord, emit_report, fmt, summary_table, write_run

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def cell_seed(master_seed: int, params: dict) -> int:
    """Stable per-cell seed from the master seed and the cell's parameters.

    ``policy`` and ``seed`` are excluded from ``params`` by the caller so that
    both designers see the same observation stream within a cell.
    """
    payload = json.dumps({"master": int(master_seed), "params": _canonical(params)},
                         sort_keys=True, separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:4], "big")


def _canonical(params: dict) -> dict:
    out = {}
    for k, v in sorted(params.items()):
        if isinstance(v, tuple):
            v = [fmt(x) for x in v]
        elif isinstance(v, float):
            v = fmt(v)
        out[k] = v
    return out


def run_dir_name(cell: dict) -> str:
    rho = cell["rho"]
    rho = "net" if rho is None else ("vec" if isinstance(rho, tuple) else fmt(rho))
    name = f"{cell['policy']}_alpha={fmt(cell['alpha'])}_rho={rho}_beta={fmt(cell['beta'])}"
    if cell.get("seed") is not None:
        name += f"_seed={cell['seed']}"
    return name


@dataclass
class CellOutcome:
    record: RunRecord
    params: dict
    wall_clock_s: float
    error: Optional[str] = None


def _error_text(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def execute_cell(base: ScenarioConfig, cell: dict, run_seed: int, net=None, model=None,
                 dump_dir=None):
    """Run one (policy, alpha, rho, beta) cell and return its :class:`RunResult`."""
    cfg = replace(base, model=replace(base.model, alpha=cell["alpha"], rho=cell["rho"],
                                      beta=cell["beta"]))
    if net is None:
        net = cfg.build_network()
    kernel = cfg.memory_kernel()
    x0 = cfg.initial_state(net.n_agents)
    est = cfg.estimator
    if cell["policy"] == "naive":
        return run_naive(net, kernel, cfg.model.beta, cfg.model.alpha, cfg.model.T, seed=run_seed,
                         x0=x0, estimator=est.kind, decay=est.decay)
    return run_receding_horizon(net, kernel, cfg.mpc, cfg.model.beta, cfg.model.alpha, cfg.model.T,
                                seed=run_seed, estimator=est.kind, decay=est.decay, x0=x0,
                                dump_dir=dump_dir, model=model)


def _run_group(base: ScenarioConfig, cells: list[dict], out: str, dump_qp: bool) -> list[CellOutcome]:
    """Cells sharing (alpha, rho): one network build and one condensed model."""
    outcomes = []
    net = model = None
    setup_error = None
    try:
        first = cells[0]
        net = replace(base, model=replace(base.model, rho=first["rho"])).build_network()
    except Exception as exc:  # isolate to this group
        setup_error = _error_text(exc)
    for cell in cells:
        params = {k: v for k, v in cell.items() if k not in ("policy", "seed")}
        master = base.seed if cell.get("seed") is None else cell["seed"]
        seed = cell_seed(master, params)
        rec = RunRecord(policy=cell["policy"], alpha=cell["alpha"], rho=cell["rho"],
                        beta=cell["beta"], seed=seed, run_dir=run_dir_name(cell))
        start = time.perf_counter()
        error = setup_error
        if error is None:
            try:
                if cell["policy"] == "rh" and model is None:
                    model = CondensedMpc(net, base.memory_kernel(), base.mpc, cell["alpha"])
                dump_dir = Path(out) / rec.run_dir / "qp" if dump_qp else None
                result = execute_cell(base, cell, seed, net=net, model=model, dump_dir=dump_dir)
                rec.summary, rec.result = result.summary, result
            except Exception as exc:
                error = _error_text(exc)
                log.error("cell %s failed: %s", rec.run_dir, error)
        if error is not None:
            rec.status = "failed"
        write_run(rec, out)
        rec.result = None  # keep the cross-process payload small
        outcomes.append(CellOutcome(rec, cell, time.perf_counter() - start, error))
    return outcomes


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(value):
    return list(value) if isinstance(value, tuple) else value


def run_sweep(spec: SweepSpec, base: ScenarioConfig, out=None, jobs: int = 1,
              dump_qp: bool = False) -> list[RunRecord]:
    """Run every cell of the Cartesian product and write the artifact set.

    Cells are grouped by ``(alpha, rho)`` so runs differing only in budget,
    seed or policy reuse one condensed MPC model. Groups run in worker
    processes when ``jobs > 1``. A failing cell is recorded in the manifest
    and the remaining cells still run.
    """
    out = Path(base.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    cells = spec.cells(base)
    groups: dict = {}
    for cell in cells:
        groups.setdefault((cell["alpha"], cell["rho"]), []).append(cell)
    started = time.perf_counter()
    outcomes: list[CellOutcome] = []
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(groups))) as pool:
            futures = [pool.submit(_run_group, base, g, str(out), dump_qp) for g in groups.values()]
            for fut in futures:
                outcomes += fut.result()
    else:
        for g in groups.values():
            outcomes += _run_group(base, g, str(out), dump_qp)
    records = [o.record for o in outcomes]
    emit_report(records, out, write_runs=False)
    write_manifest(out, base, spec, outcomes, time.perf_counter() - started, jobs)
    return records


def write_manifest(out: Path, base: ScenarioConfig, spec: Optional[SweepSpec],
                   outcomes: list[CellOutcome], wall_clock_s: float, jobs: int = 1) -> Path:
    """Config echo, per-cell seeds and status, timings and a hash of every artifact."""
    artifacts = {}
    for path in sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST):
        artifacts[path.relative_to(out).as_posix()] = _sha256(path)
    manifest = {
        "config": config_to_dict(base),
        "sweep": None if spec is None else sweep_to_dict(spec),
        "master_seed": base.seed,
        "jobs": jobs,
        "wall_clock_s": wall_clock_s,
        "cells": [{
            "run_dir": o.record.run_dir,
            "params": {k: _jsonable(v) for k, v in o.params.items()},
            "seed": o.record.seed,
            "status": o.record.status,
            "error": o.error,
            "wall_clock_s": o.wall_clock_s,
        } for o in sorted(outcomes, key=lambda o: o.record.run_dir)],
        "failures": sum(o.error is not None for o in outcomes),
        "artifacts": artifacts,
    }
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_single(base: ScenarioConfig, policy: str, out=None, dump_qp: bool = False) -> RunRecord:
    """One closed-loop run of the base scenario, written like a one-cell sweep."""
    spec = SweepSpec(policy=(policy,))
    records = run_sweep(spec, base, out=out, jobs=1, dump_qp=dump_qp)
    return records[0]


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


__all__ = ["cell_seed", "run_dir_name", "execute_cell", "run_sweep", "run_single", "write_manifest",
           "summary_table", "default_jobs", "MANIFEST"]
