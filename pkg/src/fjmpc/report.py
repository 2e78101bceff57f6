"""Run artifacts: trajectory and time-series tables, the summary table, QP dumps."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .budget import BudgetLedger
from .dynamics import Trajectory
from .policy import RunResult, RunSummary

SUMMARY_COLUMNS = ["policy", "x_bar_T", "sigma_x_T", "u_s_mean", "u_l_mean", "beta", "residual_budget"]
CELL_COLUMNS = ["alpha", "rho", "seed", "status"]
TRAJECTORY_COLUMNS = ["t", "agent_id", "x", "u_mem", "u_s", "u_l", "u_effective", "y", "mu",
                      "spend", "remaining"]
SERIES = ("x", "u_mem", "u_s", "u_l")


def fmt12(value) -> str:
    """Twelve significant digits (trajectory files)."""
    return "" if value is None else format(float(value), ".12g")


def fmt(value) -> str:
    """Shortest exact text for a float; blank for ``None``."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


@dataclass
class RunRecord:
    """One executed (or failed) run and where its files go."""

    policy: str
    alpha: float
    rho: object
    beta: float
    seed: int
    run_dir: str
    status: str = "ok"
    summary: Optional[RunSummary] = None
    result: Optional[RunResult] = None

    def sort_key(self):
        rho = self.rho if isinstance(self.rho, (int, float)) else -1.0
        return (self.policy, self.beta, self.alpha, rho, self.seed, self.run_dir)

    def to_json(self) -> dict:
        return {"policy": self.policy, "alpha": self.alpha,
                "rho": list(self.rho) if isinstance(self.rho, tuple) else self.rho,
                "beta": self.beta, "seed": self.seed, "run_dir": self.run_dir, "status": self.status,
                "summary": None if self.summary is None else asdict(self.summary)}

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        summary = data.get("summary")
        rho = data["rho"]
        return cls(policy=data["policy"], alpha=data["alpha"],
                   rho=tuple(rho) if isinstance(rho, list) else rho, beta=data["beta"],
                   seed=data["seed"], run_dir=data["run_dir"], status=data["status"],
                   summary=None if summary is None else RunSummary(**summary))


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def trajectory_table(traj: Trajectory, ledger: BudgetLedger) -> str:
    """Long format: one row per ``(t, agent)``; input columns are blank at ``t = T``.

    Values carry 12 significant digits.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    T = traj.horizon
    alpha = ledger.alpha
    remaining = ledger.beta - np.concatenate([[0.0], np.cumsum(ledger.spend_history)])
    for t, state in enumerate(traj.states):
        has_input = t < T
        inp = traj.inputs[t] if has_input else None
        y = traj.observations[t] if t < len(traj.observations) else None
        mu = traj.estimates[t] if t < len(traj.estimates) else None
        for v in range(state.x.shape[0]):
            w.writerow([
                t, v, fmt12(state.x[v]), fmt12(state.u_mem[v]),
                fmt12(inp.u_s[v]) if has_input else "",
                fmt12(inp.u_l[v]) if has_input else "",
                fmt12(traj.effective[t][v]) if has_input else "",
                "" if y is None else int(y[v]),
                "" if mu is None else fmt12(mu[v]),
                fmt12(alpha * inp.u_s[v] + (1.0 - alpha) * inp.u_l[v]) if has_input else "",
                fmt12(remaining[t]) if t < len(remaining) else "",
            ])
    return buf.getvalue()


def timeseries_table(traj: Trajectory) -> str:
    """Wide format: per-agent columns plus an agent-mean column per quantity."""
    n = traj.states[0].x.shape[0]
    T = traj.horizon
    data = {"x": traj.x(), "u_mem": traj.u_mem(), "u_s": traj.u_s(), "u_l": traj.u_l()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t"]
    for q in SERIES:
        header += [f"{q}_{v}" for v in range(n)] + [f"{q}_mean"]
    w.writerow(header)
    for t in range(T + 1):
        row = [t]
        for q in SERIES:
            arr = data[q]
            if t < arr.shape[0]:
                row += [fmt(v) for v in arr[t]] + [fmt(np.mean(arr[t]))]
            else:
                row += [""] * (n + 1)
        w.writerow(row)
    return buf.getvalue()


def summary_table(records: Iterable[RunRecord]) -> str:
    """Summary rows sorted by (policy, beta, alpha, rho); cell columns trail."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS + CELL_COLUMNS)
    for rec in sorted(records, key=RunRecord.sort_key):
        s = rec.summary
        values = [""] * 6 if s is None else [
            fmt(s.x_bar_T), fmt(s.sigma_x_T), fmt(s.u_s_mean), fmt(s.u_l_mean), fmt(s.beta),
            fmt(s.residual_budget)]
        if s is None:
            values[4] = fmt(rec.beta)
        rho = "" if rec.rho is None else (
            "per-agent" if isinstance(rec.rho, tuple) else fmt(rec.rho))
        w.writerow([rec.policy] + values + [fmt(rec.alpha), rho, fmt(rec.seed), rec.status])
    return buf.getvalue()


def write_run(record: RunRecord, out_dir) -> list[Path]:
    """Per-run files: trajectory, time series and the run's summary record."""
    run_dir = Path(out_dir) / record.run_dir
    written = []
    if record.result is not None:
        traj, ledger = record.result.trajectory, record.result.ledger
        written.append(_write(run_dir / "trajectory.csv", trajectory_table(traj, ledger)))
        written.append(_write(run_dir / "timeseries.csv", timeseries_table(traj)))
    written.append(_write(run_dir / "summary.json",
                          json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n"))
    return written


def emit_report(records: list[RunRecord], out_dir, write_runs: bool = True) -> list[Path]:
    """Write per-run files (when results are attached) and ``summary.csv``."""
    if not records:
        raise ValueError("nothing to report: no run records")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if write_runs:
            for rec in records:
                written += write_run(rec, out)
        written.append(_write(out / "summary.csv", summary_table(records)))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {out}: {exc.strerror}") from None
    return written


def load_records(run_dir) -> list[RunRecord]:
    """Collect the per-run summary records below ``run_dir``."""
    paths = sorted(Path(run_dir).glob("**/summary.json"))
    if not paths:
        raise FileNotFoundError(f"no summary.json files under {run_dir}")
    return [RunRecord.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in paths]


def dump_qp(problem, directory, tag: str) -> list[Path]:
    """Write a QP as MatrixMarket files for offline debugging.

    The (run-constant) Hessian and inequality matrix are written once per
    directory; the linear term, bounds and box go in ``<tag>_*.mtx``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mat in (("hessian", problem.hessian), ("ineq_matrix", sp.coo_matrix(problem.ineq_matrix))):
        path = d / f"{name}.mtx"
        if not path.exists():
            scipy.io.mmwrite(str(path), mat, precision=17)
            written.append(path)
    for name in ("linear", "ineq_bound", "lower", "upper"):
        path = d / f"{tag}_{name}.mtx"
        scipy.io.mmwrite(str(path), np.asarray(getattr(problem, name))[:, None], precision=17)
        written.append(path)
    return written
