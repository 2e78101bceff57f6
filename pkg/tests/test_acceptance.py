"""Acceptance criteria 1-12, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` to see one PASS/FAIL line per
criterion in the terminal summary.
"""
import csv
import time
from pathlib import Path

import numpy as np
import pytest

from fjmpc import (IncentiveInput, MemoryKernel, QpProblem, SimState, assemble_augmented,
                   forced_equilibrium, memory_convolution, simulate_trajectory, solve_qp)
from fjmpc.config import parse_config, parse_sweep
from fjmpc.dynamics import kernel_weights, simulate_constant, step
from fjmpc.policy import terminal_cost
from fjmpc.qp import OPTIMAL, kkt_residuals
from fjmpc.sweep import default_jobs, run_sweep

from helpers import feasible_constant_inputs, random_network
from oracles import dual_projected_gradient, random_qp

CONFIGS = Path(__file__).resolve().parents[1] / "scripts" / "configs"
HORIZON = 10_000


def _lemma_limit(net):
    lam = net.susceptibility
    M = np.eye(net.n_agents) - lam[:, None] * net.influence_matrix
    return np.linalg.solve(M, (1.0 - lam) * net.inherent_bias)


def test_c01_fj_convergence(criterion):
    with criterion(1, "FJ convergence to the closed-form limit") as c:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(50):
            net = random_network(seed, max_n=20)
            end = simulate_constant(net, MemoryKernel(), HORIZON)
            worst = max(worst, np.max(np.abs(end.x - _lemma_limit(net))))
        elapsed = time.perf_counter() - start
        c.detail = f"max err {worst:.2e}, {elapsed:.2f} s"
        assert worst <= 1e-8
        assert elapsed < 5.0


def test_c02_memory_equivalence(criterion):
    with criterion(2, "IIR convolution equals recursion") as c:
        start = time.perf_counter()
        worst = 0.0
        rng = np.random.default_rng(2)
        for tau in (1.0, 3.0, 10.0):
            k = MemoryKernel("iir", tau)
            history = rng.random((200, 6))
            mem = np.zeros(6)
            for t in range(200):
                conv = memory_convolution(k, history[:t])
                worst = max(worst, np.max(np.abs(conv - mem)))
                mem = k.gamma * mem + k.omega0 * history[t]
        elapsed = time.perf_counter() - start
        c.detail = f"max err {worst:.2e}, {elapsed:.2f} s"
        assert worst <= 1e-12
        assert elapsed < 1.0


def test_c03_forced_equilibrium(criterion):
    with criterion(3, "forced limit under constant unbudgeted inputs") as c:
        worst = 0.0
        for seed in range(20):
            net = random_network(100 + seed)
            k = MemoryKernel("iir", float(np.random.default_rng(seed).uniform(1, 10)))
            u_s, u_l = feasible_constant_inputs(net, np.random.default_rng(seed))
            end = simulate_constant(net, k, HORIZON, u_s, u_l)
            ref = forced_equilibrium(net, net.persistence_weight, u_s, u_l).x_inf
            worst = max(worst, np.max(np.abs(end.x - ref)))
        c.detail = f"max err {worst:.2e}"
        assert worst <= 1e-8


def test_c04_budget_depletion_limit(criterion):
    with criterion(4, "free limit after inputs stop at T_B=5") as c:
        worst = 0.0
        T_B = 5
        for seed in range(20):
            net = random_network(200 + seed)
            k = MemoryKernel()
            u_s, u_l = feasible_constant_inputs(net, np.random.default_rng(seed))
            head = simulate_trajectory(net, k, lambda s, mu: IncentiveInput(u_s, u_l), T_B, observe=False)
            end = simulate_constant(net, k, HORIZON - T_B, state=head.states[-1])
            worst = max(worst, np.max(np.abs(end.x - _lemma_limit(net))))
        c.detail = f"max err {worst:.2e}"
        assert worst <= 1e-6


def test_c05_switch_off_decay_and_fir_bounds(criterion):
    with criterion(5, "switch-off decay (IIR) and FIR bounds") as c:
        rng = np.random.default_rng(5)
        worst = 0.0
        for tau in (1.0, 3.0, 10.0):
            k = MemoryKernel("iir", tau)
            history = list(rng.random((int(rng.integers(1, 20)), 4)))
            off = memory_convolution(k, history)
            for m in range(1, 51):
                history.append(np.zeros(4))
                worst = max(worst, np.max(np.abs(memory_convolution(k, history) - k.kappa ** m * off)))
        assert worst <= 1e-12
        violations = 0
        for case in range(100):
            J = int(rng.integers(1, 15))
            k = MemoryKernel("fir", float(rng.uniform(0.5, 10)), J)
            pulses = list(rng.random((int(rng.integers(1, 25)), 3)))
            last = pulses[-1]
            history = list(pulses)
            mem = [memory_convolution(k, history)]  # memory right after the last pulse
            for m in range(1, J + 1):
                history.append(np.zeros(3))
                mem.append(memory_convolution(k, history))
            w0 = kernel_weights(k, 0)
            for m in range(J + 1):
                if np.any(mem[m] < w0 * k.kappa ** m * last - 1e-15):
                    violations += 1
                if np.max(mem[m]) > k.kappa ** m * np.max(mem[0]) + 1e-15:
                    violations += 1
        c.detail = f"IIR max err {worst:.2e}, FIR bound violations {violations}/100 histories"
        assert violations == 0


def test_c06_augmented_equivalence(criterion):
    with criterion(6, "flat and augmented models agree") as c:
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            net = random_network(300 + seed, max_n=15)
            n = net.n_agents
            k = MemoryKernel("iir", float(rng.uniform(1, 10)))
            aug = assemble_augmented(net, k)
            state = SimState(0, rng.random(n), np.zeros(n))
            z = np.concatenate([state.x, state.u_mem])
            _, u_l = feasible_constant_inputs(net, rng)
            rho = net.persistence_weight
            for _ in range(50):
                room = (1 - net.inherent_bias) - rho * state.u_mem
                u_s = np.where(rho < 1, np.clip(rng.random(n) * room / np.maximum(1 - rho, 1e-12), 0, 1), 0.0)
                state = step(net, k, state, IncentiveInput(u_s, u_l))
                z = aug.advance(z, u_s, u_l, net.inherent_bias)
                worst = max(worst, np.max(np.abs(z - np.concatenate([state.x, state.u_mem]))))
        c.detail = f"max err {worst:.2e}"
        assert worst <= 1e-12


def test_c07_lyapunov_certificate(criterion):
    with criterion(7, "terminal-cost Lyapunov certificate on n=112") as c:
        cfg = parse_config(CONFIGS / "baseline.yaml")
        start = time.perf_counter()
        net = cfg.build_network()
        aug = assemble_augmented(net, cfg.memory_kernel())
        cert = terminal_cost(aug, np.eye(2 * net.n_agents))
        P = cert.p_matrix
        residual = np.max(np.abs(aug.a_aug.T @ P @ aug.a_aug - P + np.eye(2 * net.n_agents)))
        np.linalg.cholesky(P)
        elapsed = time.perf_counter() - start
        c.detail = f"residual {residual:.2e}, {elapsed:.2f} s"
        assert net.n_agents == 112
        assert cfg.memory_kernel().gamma == pytest.approx(np.exp(-1 / 3), abs=1e-15)
        assert residual <= 1e-8
        assert elapsed < 10.0


def test_c08_qp_oracle_equivalence(criterion):
    with criterion(8, "QP solver vs projected-gradient oracle") as c:
        worst_gap = worst_kkt = 0.0
        not_optimal = 0
        for seed in range(200):
            H, g, G, h, lo, up = random_qp(np.random.default_rng(seed))
            p = QpProblem(H, g, G, h, lo, up)
            sol = solve_qp(p, tol_p=1e-9, tol_d=1e-9, polish=True)
            not_optimal += sol.status != OPTIMAL
            _, f_star, _ = dual_projected_gradient(H, g, G, h, lo, up, max_iter=1_000_000)
            worst_gap = max(worst_gap, abs(sol.objective - f_star))
            worst_kkt = max(worst_kkt, max(kkt_residuals(p, sol.z_star, sol.duals)))
        c.detail = f"max gap {worst_gap:.2e}, max KKT {worst_kkt:.2e}, non-optimal {not_optimal}"
        assert not_optimal == 0
        assert worst_gap <= 1e-6
        assert worst_kkt <= 1e-6


# -- closed-loop sweep (criteria 9-12) -----------------------------------------------------

def _run_protocol_sweep(out):
    base = parse_config(CONFIGS / "baseline.yaml")
    spec = parse_sweep(CONFIGS / "grid.yaml")
    start = time.perf_counter()
    records = run_sweep(spec, base, out=out, jobs=default_jobs())
    return records, time.perf_counter() - start


@pytest.fixture(scope="module")
def protocol_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("protocol")
    records, elapsed = _run_protocol_sweep(out)
    return out, records, elapsed


def _cells(records):
    return {(r.policy, r.alpha, r.rho, r.beta): r for r in records}


def test_c09_closed_loop_invariants(criterion, protocol_sweep):
    with criterion(9, "closed-loop box and budget invariants over the full sweep") as c:
        out, records, elapsed = protocol_sweep
        c.detail = f"{len(records)} runs, {elapsed:.1f} s"
        assert len(records) == 24
        assert all(r.status == "ok" for r in records)
        lo_x = lo_u = lo_rem = np.inf
        hi_x = hi_u = -np.inf
        for r in records:
            with open(out / r.run_dir / "trajectory.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    x = float(row["x"])
                    lo_x, hi_x = min(lo_x, x), max(hi_x, x)
                    for key in ("u_s", "u_l", "u_effective"):
                        if row[key]:
                            u = float(row[key])
                            lo_u, hi_u = min(lo_u, u), max(hi_u, u)
                    if row["remaining"]:
                        lo_rem = min(lo_rem, float(row["remaining"]))
        c.detail += f", x in [{lo_x:.3g}, {hi_x:.3g}], u in [{lo_u:.3g}, {hi_u:.3g}], min U {lo_rem:.3g}"
        assert lo_x >= 0.0 and hi_x <= 1.0
        assert lo_u >= 0.0 and hi_u <= 1.0
        assert lo_rem >= 0.0
        assert elapsed < 180.0


def test_c10_policy_ordering(criterion, protocol_sweep):
    with criterion(10, "RH beats naive on final mean and residual budget (alpha=0.5, rho=0.7)") as c:
        _, records, _ = protocol_sweep
        cells = _cells(records)
        parts = []
        for beta in (200.0, 400.0):
            rh, naive = cells[("rh", 0.5, 0.7, beta)].summary, cells[("naive", 0.5, 0.7, beta)].summary
            parts.append(f"beta={beta:g}: x {rh.x_bar_T:.3f} vs {naive.x_bar_T:.3f}, "
                         f"r {rh.residual_budget:.2f} vs {naive.residual_budget:.2f}")
            c.detail = "; ".join(parts)
            assert rh.x_bar_T > naive.x_bar_T
            assert rh.residual_budget < naive.residual_budget


def test_c11_alpha_effect(criterion, protocol_sweep):
    with criterion(11, "cheaper channel receives more effort (rho=0.7, beta=200)") as c:
        _, records, _ = protocol_sweep
        cells = _cells(records)
        low, high = cells[("rh", 0.2, 0.7, 200.0)].summary, cells[("rh", 0.8, 0.7, 200.0)].summary
        c.detail = (f"u_l {high.u_l_mean:.3f} (a=0.8) vs {low.u_l_mean:.3f} (a=0.2), "
                    f"u_s {low.u_s_mean:.3f} (a=0.2) vs {high.u_s_mean:.3f} (a=0.8)")
        assert high.u_l_mean > low.u_l_mean
        assert low.u_s_mean > high.u_s_mean


def test_c12_determinism(criterion, protocol_sweep, tmp_path):
    with criterion(12, "repeat sweep gives a byte-identical summary table") as c:
        out, _, _ = protocol_sweep
        _, elapsed = _run_protocol_sweep(tmp_path)
        first = (out / "summary.csv").read_bytes()
        second = (tmp_path / "summary.csv").read_bytes()
        c.detail = f"{len(first)} bytes, rerun {elapsed:.1f} s"
        assert first == second
