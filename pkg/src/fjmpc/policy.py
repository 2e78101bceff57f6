"""Incentive policy designers: the naive distributive rule and receding-horizon MPC."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import LyapunovCertificate, solve_discrete_lyapunov
from .budget import DEPLETION_TOL, BudgetLedger, step_spend
from .dynamics import (AugmentedModel, IncentiveInput, LeakyIntegrator, MemoryKernel,
                       RunningMean, SimState, Trajectory, assemble_augmented,
                       simulate_trajectory)
from .errors import SolverError
from .network import InfluenceNetwork
from .qp import INFEASIBLE, OPTIMAL, QpProblem, QpSolution, QpWorkspace, solve_qp

log = logging.getLogger(__name__)

CUMULATIVE = "cumulative"
LITERAL = "literal"


def _expand(weight, size: int) -> np.ndarray:
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(size)
    if w.shape != (size, size):
        raise ValueError(f"weight matrix must be {size}x{size}, got {w.shape}")
    return w


def _check_weight(name: str, M: np.ndarray, definite: bool):
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.abs(M).max()):
        raise ValueError(f"{name} must be symmetric")
    if definite:
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ValueError(f"{name} must be positive definite") from None
    elif np.linalg.eigvalsh(M).min() < -1e-12 * max(1.0, np.abs(M).max()):
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class MpcConfig:
    """Receding-horizon design parameters.

    Weights may be scalars (expanded to ``scalar * I``) or full matrices;
    ``q_terminal`` acts on the stacked ``[1 - x; u_mem]`` deviation.
    ``budget_rule`` selects how planned spend is bounded: ``"cumulative"``
    caps the planned spend through each stage by ``U(t)``; ``"literal"``
    caps the sum of the cumulative spends through stages ``h`` and ``h-1``.
    """

    horizon: int = 10
    q_weight: object = 100.0
    r1_weight: object = 10.0
    r2_weight: object = 10.0
    q_terminal: object = 1.0
    use_terminal: bool = True
    budget_rule: str = CUMULATIVE
    tol_p: float = 1e-7
    tol_d: float = 1e-6
    max_iter: int = 3000
    polish: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon L must be at least 1")
        if self.budget_rule not in (CUMULATIVE, LITERAL):
            raise ValueError(f"budget_rule must be {CUMULATIVE!r} or {LITERAL!r}")

    def matrices(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        Q = _expand(self.q_weight, n)
        R1 = _expand(self.r1_weight, n)
        R2 = _expand(self.r2_weight, n)
        QL = _expand(self.q_terminal, 2 * n)
        # effort weights keep the condensed Hessian definite; state weights may be zero
        for name, M, definite in (("Q", Q, False), ("R1", R1, True), ("R2", R2, True),
                                  ("Q_L", QL, False)):
            _check_weight(name, M, definite)
        return Q, R1, R2, QL


@dataclass(frozen=True, eq=False)
class PolicySchedule:
    u_s_plan: np.ndarray
    u_l_plan: np.ndarray
    predicted_x: np.ndarray
    predicted_u_mem: np.ndarray
    planned_spend: np.ndarray


@dataclass(frozen=True)
class RunSummary:
    policy: str
    x_bar_T: float
    sigma_x_T: float
    u_s_mean: float
    u_l_mean: float
    beta: float
    residual_budget: float


# -- naive policy ------------------------------------------------------------------

def short_term_cap(net: InfluenceNetwork) -> np.ndarray:
    """Largest constant short-term input that cannot saturate an agent.

    Agents with ``rho = 1`` get zero: their short-term channel has no effect.
    """
    u_o, rho = net.inherent_bias, net.persistence_weight
    cap = np.zeros(net.n_agents)
    active = rho < 1.0
    cap[active] = np.clip((1.0 - u_o[active] - rho[active]) / (1.0 - rho[active]), 0.0, 1.0)
    return cap


def naive_policy(net: InfluenceNetwork, beta: float, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Spread the budget evenly over agents and steps.

    Returns constant ``(u_bar_s, u_bar_l)``; the per-agent short-term value
    is capped by :func:`short_term_cap`.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    n = net.n_agents
    u_bar = min(beta, T * n) / (T * n)
    u_s = np.minimum(u_bar, short_term_cap(net))
    u_l = np.full(n, u_bar)
    return u_s, u_l


# -- terminal cost -------------------------------------------------------------------

def terminal_cost(aug: AugmentedModel, q_terminal) -> LyapunovCertificate:
    n2 = aug.a_aug.shape[0]
    return solve_discrete_lyapunov(aug.a_aug, _expand(q_terminal, n2))


def terminal_value(cert: LyapunovCertificate, x, u_mem) -> float:
    """Block expansion of the terminal penalty at ``(x, u_mem)``."""
    dx = 1.0 - np.asarray(x, dtype=float)
    m = np.asarray(u_mem, dtype=float)
    return float(dx @ cert.p11 @ dx + m @ cert.p22 @ m + 2.0 * dx @ cert.p12 @ m)


# -- condensed MPC ------------------------------------------------------------------------

class CondensedMpc:
    """Prediction matrices, cost and constraints of the MPC in the inputs only.

    The decision vector stacks ``u_s(0..L-1)`` then ``u_l(0..L-1)``
    (``d = 2 n L``). Everything except the linear term and the right-hand
    sides is independent of the measured state and the remaining budget,
    so one instance (and its solver workspace) serves a whole run.
    """

    def __init__(self, net: InfluenceNetwork, kernel: MemoryKernel, cfg: MpcConfig, alpha: float):
        self.net, self.kernel, self.cfg, self.alpha = net, kernel, cfg, float(alpha)
        n, L = net.n_agents, cfg.horizon
        self.n, self.L = n, L
        self.d = 2 * n * L
        self.aug = assemble_augmented(net, kernel)
        Q, R1, R2, QL = cfg.matrices(n)
        self.certificate = terminal_cost(self.aug, QL) if cfg.use_terminal else None

        A, Bs, Bl = self.aug.a_aug, self.aug.b_s, self.aug.b_l
        c = self.aug.b_o @ net.inherent_bias
        n2 = 2 * n
        # s(h) = Phi[h] s0 + psi[h] + Gamma[h] z
        Phi = np.empty((L + 1, n2, n2))
        psi = np.empty((L + 1, n2))
        Gamma = np.zeros((L + 1, n2, self.d))
        Phi[0], psi[0] = np.eye(n2), 0.0
        for h in range(L):
            Phi[h + 1] = A @ Phi[h]
            psi[h + 1] = A @ psi[h] + c
            Gamma[h + 1] = A @ Gamma[h]
            Gamma[h + 1][:, self.us_slice(h)] += Bs
            Gamma[h + 1][:, self.ul_slice(h)] += Bl
        self.Phi, self.psi, self.Gamma = Phi, psi, Gamma

        # deviation [1 - x; u_mem] = flip * s + offset
        flip = np.concatenate([-np.ones(n), np.ones(n)])
        offset = np.concatenate([np.ones(n), np.zeros(n)])
        Rblk = np.zeros((self.d, self.d))
        for h in range(L):
            Rblk[self.us_slice(h), self.us_slice(h)] = R1
            Rblk[self.ul_slice(h), self.ul_slice(h)] = R2

        # stages 1..L-1, x rows, stacked; stage 0 does not depend on z
        Gx = Gamma[1:L, :n, :].reshape(-1, self.d)
        QGx = (Q @ Gamma[1:L, :n, :]).reshape(-1, self.d)
        H = Gx.T @ QGx + Rblk
        # linear term: 2 * [sum_h Gx' Q (x_free(h) - 1) + GL' flip P (flip s_free(L) + offset)]
        lin_s0 = QGx.T @ Phi[1:L, :n, :].reshape(-1, n2)
        lin_c = QGx.T @ (psi[1:L, :n] - 1.0).ravel()
        self._Q = Q
        if self.certificate is not None:
            P = self.certificate.p_matrix
            FG = flip[:, None] * Gamma[L]
            PFG = P @ FG
            H = H + FG.T @ PFG
            lin_s0 = lin_s0 + PFG.T @ (flip[:, None] * Phi[L])
            lin_c = lin_c + PFG.T @ (flip * psi[L] + offset)
        self.hessian = 2.0 * 0.5 * (H + H.T)
        self.hessian.setflags(write=False)
        self._lin_s0 = 2.0 * lin_s0
        self._lin_c = 2.0 * lin_c
        self._flip, self._offset = flip, offset

        self.ineq_matrix = self._constraint_rows()
        self.workspace: Optional[QpWorkspace] = None

    # -- layout helpers
    def us_slice(self, h: int) -> slice:
        return slice(h * self.n, (h + 1) * self.n)

    def ul_slice(self, h: int) -> slice:
        off = self.n * self.L
        return slice(off + h * self.n, off + (h + 1) * self.n)

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        half = self.n * self.L
        return z[:half].reshape(self.L, self.n), z[half:].reshape(self.L, self.n)

    def stack(self, u_s_plan, u_l_plan) -> np.ndarray:
        return np.concatenate([np.asarray(u_s_plan, float).ravel(), np.asarray(u_l_plan, float).ravel()])

    @property
    def n_design_rows(self) -> int:
        return self.n * (self.L + 1)

    def _constraint_rows(self) -> np.ndarray:
        n, L = self.n, self.L
        rho = self.net.persistence_weight
        rows = []
        # incentive headroom at stages 0..L-1, and memory headroom at stage L
        for h in range(L + 1):
            block = rho[:, None] * self.Gamma[h, n:, :]
            if h < L:
                block[:, self.us_slice(h)] += np.diag(1.0 - rho)
            rows.append(block)
        spend = np.zeros((L, self.d))
        for h in range(L):
            spend[h, self.us_slice(h)] = self.alpha
            spend[h, self.ul_slice(h)] = 1.0 - self.alpha
        # stage spends are nonnegative on the box, so cumulative spend is monotone
        # in h and only the last stage's row can bind; earlier rows are redundant
        # and only slow the solver down
        total = spend.sum(axis=0)
        if self.cfg.budget_rule == LITERAL and L > 1:
            total = total + spend[:-1].sum(axis=0)
        rows.append(total[None, :])
        return np.vstack(rows)

    def ineq_bound(self, u_mem0, remaining: float) -> np.ndarray:
        n, L = self.n, self.L
        rho = self.net.persistence_weight
        headroom = 1.0 - self.net.inherent_bias
        g = self.kernel.gamma
        design = [np.maximum(headroom - rho * g ** h * u_mem0, 0.0) for h in range(L + 1)]
        return np.concatenate(design + [[max(float(remaining), 0.0)]])

    def linear(self, s0) -> np.ndarray:
        return self._lin_s0 @ s0 + self._lin_c

    def constant(self, s0) -> float:
        """Cost offset so that ``problem.objective(z) + constant`` is the MPC cost."""
        n, L = self.n, self.L
        c = 0.0
        for h in range(L):
            dev = 1.0 - (self.Phi[h, :n] @ s0 + self.psi[h, :n])
            c += dev @ self._Q @ dev
        if self.certificate is not None:
            e = self._flip * (self.Phi[L] @ s0 + self.psi[L]) + self._offset
            c += e @ self.certificate.p_matrix @ e
        return float(c)

    def qp(self, state: SimState, remaining: float) -> QpProblem:
        s0 = np.concatenate([state.x, state.u_mem])
        upper = np.ones(self.d)
        if remaining <= DEPLETION_TOL:
            # only free channels can move; pinning the rest keeps the QP nondegenerate
            half = self.n * self.L
            if self.alpha > 0:
                upper[:half] = 0.0
            if self.alpha < 1:
                upper[half:] = 0.0
        return QpProblem(self.hessian, self.linear(s0), self.ineq_matrix,
                         self.ineq_bound(state.u_mem, remaining), 0.0, upper)

    def predict(self, state: SimState, z) -> tuple[np.ndarray, np.ndarray]:
        s0 = np.concatenate([state.x, state.u_mem])
        S = np.einsum("hij,j->hi", self.Phi, s0) + self.psi + self.Gamma @ np.asarray(z, float)
        return S[:, : self.n], S[:, self.n:]

    def cost(self, state: SimState, z) -> float:
        """Full MPC objective (stage costs plus terminal penalty) of plan ``z``."""
        s0 = np.concatenate([state.x, state.u_mem])
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.linear(s0) @ z + self.constant(s0))

    def feasible(self, state: SimState, remaining: float, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        if np.any(z < -tol) or np.any(z > 1 + tol):
            return False
        return bool(np.all(self.ineq_matrix @ z <= self.ineq_bound(state.u_mem, remaining) + tol))

    def planned_spend(self, z) -> np.ndarray:
        us, ul = self.split(z)
        return self.alpha * us.sum(axis=1) + (1.0 - self.alpha) * ul.sum(axis=1)

    def shift(self, solution: QpSolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Previous solution advanced one stage (tail padded with zeros)."""
        n, L = self.n, self.L

        def roll_plan(v):
            us, ul = self.split(v)
            us = np.vstack([us[1:], np.zeros((1, n))])
            ul = np.vstack([ul[1:], np.zeros((1, n))])
            return self.stack(us, ul)

        mu = solution.duals
        design = mu[: self.n_design_rows].reshape(L + 1, n)
        design = np.vstack([design[1:], np.zeros((1, n))]).ravel()
        budget = mu[self.n_design_rows:]
        return roll_plan(solution.z_star), np.concatenate([design, budget]), roll_plan(solution.box_duals)


def assemble_mpc_qp(state_estimate: SimState, net: InfluenceNetwork, kernel: MemoryKernel,
                    cfg: MpcConfig, remaining: float, alpha: float) -> QpProblem:
    return CondensedMpc(net, kernel, cfg, alpha).qp(state_estimate, remaining)


# -- guarding applied inputs ----------------------------------------------------------------------

def guard_input(net: InfluenceNetwork, kernel: MemoryKernel, u_mem, u_s, u_l, remaining: float,
                alpha: float) -> tuple[IncentiveInput, float]:
    """Clip an input to the true incentive headroom and the remaining budget.

    Returns the admissible input and the largest componentwise reduction.
    The long-term input is limited so that next step's memory trace alone
    still fits the headroom; the short-term input must fit the headroom
    left by the current memory; finally both are scaled down together if
    the step would overdraw the budget.
    """
    u_o, rho = net.inherent_bias, net.persistence_weight
    u_mem = np.asarray(u_mem, dtype=float)
    us0 = np.clip(np.asarray(u_s, dtype=float), 0.0, 1.0)
    ul0 = np.clip(np.asarray(u_l, dtype=float), 0.0, 1.0)
    headroom = 1.0 - u_o

    ul = ul0.copy()
    has_mem = rho > 0
    ul_cap = np.full_like(ul, 1.0)
    ul_cap[has_mem] = (headroom[has_mem] / rho[has_mem] - kernel.gamma * u_mem[has_mem]) / kernel.omega0
    ul = np.minimum(ul, np.maximum(ul_cap, 0.0))

    us = us0.copy()
    has_short = rho < 1
    us_cap = np.zeros_like(us)
    us_cap[has_short] = (headroom[has_short] - rho[has_short] * u_mem[has_short]) / (1.0 - rho[has_short])
    us = np.minimum(us, np.maximum(us_cap, 0.0))

    spend = step_spend(alpha, us, ul)
    remaining = max(float(remaining), 0.0)
    if spend > remaining:
        scale = remaining / spend if spend > 0 else 0.0
        us, ul = us * scale, ul * scale
    clipped = float(max(np.max(np.abs(us - np.asarray(u_s)), initial=0.0),
                        np.max(np.abs(ul - np.asarray(u_l)), initial=0.0)))
    return IncentiveInput(us, ul), clipped


# -- receding horizon -------------------------------------------------------------------------------

@dataclass
class MpcDiagnostics:
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    clipped: float = 0.0


class MpcController:
    """Stateful receding-horizon controller (keeps the warm start)."""

    def __init__(self, net: InfluenceNetwork, kernel: MemoryKernel, cfg: MpcConfig, alpha: float,
                 dump_dir=None, model: Optional[CondensedMpc] = None):
        if model is None:
            model = CondensedMpc(net, kernel, cfg, alpha)
        elif model.net is not net or model.cfg != cfg or model.alpha != alpha:
            raise ValueError("prebuilt MPC model does not match the run's network, config or alpha")
        self.model = model
        self.cfg = cfg
        self.previous: Optional[QpSolution] = None
        self.history: list[MpcDiagnostics] = []
        self.dump_dir = dump_dir

    def plan(self, state: SimState, remaining: float) -> tuple[PolicySchedule, QpSolution, QpProblem]:
        model = self.model
        problem = model.qp(state, remaining)
        if model.workspace is None:
            model.workspace = QpWorkspace(problem.hessian, problem.ineq_matrix)
        warm = model.shift(self.previous) if self.previous is not None else None
        sol = solve_qp(problem, self.cfg.tol_p, self.cfg.tol_d, self.cfg.max_iter,
                       warm_start=warm, workspace=model.workspace, polish=self.cfg.polish)
        if self.dump_dir is not None:
            from .report import dump_qp
            dump_qp(problem, self.dump_dir, f"qp_t{state.t:03d}")
        if sol.status == INFEASIBLE:
            raise SolverError(f"MPC problem reported infeasible at t={state.t}")
        z = sol.z_star
        if sol.status != OPTIMAL:
            feasible = model.feasible(state, remaining, z, tol=max(1e-6, 10 * self.cfg.tol_p))
            log.warning("MPC solve at t=%d stopped at max_iter (r_p=%.2e, r_d=%.2e); %s",
                        state.t, sol.primal_residual, sol.dual_residual,
                        "applying best iterate" if feasible else "best iterate infeasible, applying zero input")
            if not feasible:
                z = np.zeros(model.d)
        self.previous = sol
        us, ul = model.split(z)
        px, pm = model.predict(state, z)
        schedule = PolicySchedule(us, ul, px, pm, model.planned_spend(z))
        return schedule, sol, problem

    def __call__(self, state: SimState, remaining: float, true_mem=None):
        schedule, sol, _ = self.plan(state, remaining)
        mem = state.u_mem if true_mem is None else true_mem
        applied, clipped = guard_input(self.model.net, self.model.kernel, mem,
                                       schedule.u_s_plan[0], schedule.u_l_plan[0],
                                       remaining, self.model.alpha)
        level = logging.WARNING if clipped > 1e-6 else logging.DEBUG
        log.log(level, "t=%d: applied input clipped by %.3g to true headroom/budget", state.t, clipped)
        diag = MpcDiagnostics(sol.status, sol.iterations, sol.primal_residual, sol.dual_residual,
                              sol.objective + self.model.constant(np.concatenate([state.x, state.u_mem])),
                              clipped)
        self.history.append(diag)
        return applied, schedule, diag


def mpc_step(state_estimate: SimState, net: InfluenceNetwork, kernel: MemoryKernel,
             cfg: MpcConfig, ledger: BudgetLedger, alpha: Optional[float] = None,
             controller: Optional[MpcController] = None):
    """Solve the MPC at the current state and return the first-stage input.

    Returns ``(applied_input, schedule, diagnostics)``.
    """
    alpha = ledger.alpha if alpha is None else alpha
    if controller is None:
        controller = MpcController(net, kernel, cfg, alpha)
    return controller(state_estimate, ledger.remaining)


def make_estimator(kind: str = "running_mean", decay: Optional[float] = None):
    if kind == "running_mean":
        return RunningMean()
    if kind == "leaky":
        return LeakyIntegrator(0.5 if decay is None else decay)
    raise ValueError(f"unknown estimator {kind!r}")


@dataclass
class RunResult:
    """Outcome of a closed-loop run; unpacks as ``(trajectory, ledger, summary)``."""

    trajectory: Trajectory
    ledger: BudgetLedger
    summary: RunSummary
    diagnostics: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.trajectory, self.ledger, self.summary))


def run_receding_horizon(net: InfluenceNetwork, kernel: MemoryKernel, cfg: MpcConfig, beta: float,
                         alpha: float, T: int, seed: int = 0, estimator: str = "running_mean",
                         decay: Optional[float] = None, x0=None, dump_dir=None,
                         model: Optional[CondensedMpc] = None) -> RunResult:
    """Closed loop: observe, estimate, re-plan, apply the first stage, repeat.

    The controller starts each plan from the estimated inclinations and the
    exact memory trace (which it can reconstruct from its own past inputs).
    ``model`` lets runs that differ only in ``beta`` (or seed) share the
    condensed matrices and solver factorizations.
    """
    ledger = BudgetLedger(beta, alpha)
    controller = MpcController(net, kernel, cfg, alpha, dump_dir=dump_dir, model=model)

    def policy(state: SimState, mu):
        est = SimState(state.t, np.asarray(mu, dtype=float), state.u_mem)
        applied, _, _ = controller(est, ledger.remaining, true_mem=state.u_mem)
        return applied

    traj = simulate_trajectory(net, kernel, policy, T, ledger=ledger, seed=seed, x0=x0,
                               estimator=make_estimator(estimator, decay))
    return RunResult(traj, ledger, summarize_run(traj, ledger, policy="rh"), controller.history)


def run_naive(net: InfluenceNetwork, kernel: MemoryKernel, beta: float, alpha: float, T: int,
              seed: int = 0, x0=None, estimator: str = "running_mean",
              decay: Optional[float] = None) -> RunResult:
    """Apply the constant naive allocation for ``T`` steps (guarded to the headroom)."""
    ledger = BudgetLedger(beta, alpha)
    u_s, u_l = naive_policy(net, beta, T)
    clips = []

    def policy(state: SimState, mu):
        applied, clipped = guard_input(net, kernel, state.u_mem, u_s, u_l, ledger.remaining, alpha)
        clips.append(clipped)
        return applied

    traj = simulate_trajectory(net, kernel, policy, T, ledger=ledger, seed=seed, x0=x0,
                               estimator=make_estimator(estimator, decay))
    return RunResult(traj, ledger, summarize_run(traj, ledger, policy="naive"), clips)


def summarize_run(trajectory: Trajectory, ledger: BudgetLedger, policy: str = "") -> RunSummary:
    xT = trajectory.states[-1].x
    us = trajectory.u_s()
    ul = trajectory.u_l()
    return RunSummary(
        policy=policy,
        x_bar_T=float(np.mean(xT)),
        sigma_x_T=float(np.std(xT)),
        u_s_mean=float(us.mean()) if us.size else 0.0,
        u_l_mean=float(ul.mean()) if ul.size else 0.0,
        beta=float(ledger.beta),
        residual_budget=float(ledger.beta - ledger.total_spend),
    )
