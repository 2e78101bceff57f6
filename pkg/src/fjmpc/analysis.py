"""Closed-form equilibria and the discrete Lyapunov solver."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import AssumptionError, DesignViolation
from .network import InfluenceNetwork, spectral_radius

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    x_inf: np.ndarray
    u_inf: np.ndarray
    residual: float


def fj_equilibrium(net: InfluenceNetwork, u_const) -> EquilibriumResult:
    """Solve ``(I - Lambda P) x = (I - Lambda) u`` for a constant input ``u``."""
    n = net.n_agents
    u = np.broadcast_to(np.asarray(u_const, dtype=float), (n,)).copy()
    M = np.eye(n) - net.lambda_p
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise AssumptionError(
            f"I - Lambda P is (nearly) singular (condition {cond:.3g}); "
            "check that every agent reaches one with susceptibility < 1")
    rhs = (1.0 - net.susceptibility) * u
    x = sla.lu_solve(sla.lu_factor(M), rhs)
    residual = float(np.max(np.abs(M @ x - rhs), initial=0.0))
    return EquilibriumResult(x, u, residual)


def forced_equilibrium(net: InfluenceNetwork, rho, u_bar_s, u_bar_l) -> EquilibriumResult:
    """Limit state under constant incentives and unlimited budget.

    The memory trace of a constant long-term input converges to the input
    itself (IIR weights sum to one), so the limiting effective input is
    ``u_o + rho*u_bar_l + (1-rho)*u_bar_s``.
    """
    n = net.n_agents
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,))
    u_s = np.broadcast_to(np.asarray(u_bar_s, dtype=float), (n,))
    u_l = np.broadcast_to(np.asarray(u_bar_l, dtype=float), (n,))
    for name, v in (("u_bar_s", u_s), ("u_bar_l", u_l)):
        if np.any((v < 0) | (v > 1)):
            raise DesignViolation(f"{name} must lie in [0, 1]")
    u_inf = net.inherent_bias + rho * u_l + (1.0 - rho) * u_s
    bad = np.flatnonzero((u_inf < 0) | (u_inf > 1 + 1e-12))
    if bad.size:
        raise DesignViolation(
            f"limit input leaves [0, 1] for agents {bad.tolist()} (incentive headroom)",
            agents=bad.tolist(), margins=(1.0 - u_inf[bad]).tolist())
    return fj_equilibrium(net, u_inf)


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    p_matrix: np.ndarray
    residual: float
    iterations: int

    @property
    def half(self) -> int:
        return self.p_matrix.shape[0] // 2

    @property
    def p11(self) -> np.ndarray:
        return self.p_matrix[: self.half, : self.half]

    @property
    def p22(self) -> np.ndarray:
        return self.p_matrix[self.half:, self.half:]

    @property
    def p12(self) -> np.ndarray:
        return self.p_matrix[: self.half, self.half:]


def solve_discrete_lyapunov(a, q, tol: float = 1e-12, max_iter: int = 64) -> LyapunovCertificate:
    """Solve ``a.T P a - P + q = 0`` by the doubling iteration.

    ``P`` accumulates ``sum_k (a.T)^k q a^k``; each sweep adds the next
    ``2^i`` terms at once through ``P <- P + A_i.T P A_i, A_i <- A_i^2``.
    """
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or q.shape != a.shape:
        raise ValueError("a and q must be square matrices of equal size")
    if np.max(np.abs(q - q.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(q), initial=0.0)):
        raise ValueError("q must be symmetric")
    radius = spectral_radius(a)
    if radius >= 1.0:
        raise AssumptionError(f"a is not Schur stable (spectral radius {radius:.6g})")

    P = q.copy()
    A = a.copy()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        increment = A.T @ P @ A
        P = P + increment
        A = A @ A
        if np.max(np.abs(increment), initial=0.0) <= tol:
            break
    else:
        raise AssumptionError("Lyapunov doubling did not converge")
    P = 0.5 * (P + P.T)
    residual = float(np.max(np.abs(a.T @ P @ a - P + q), initial=0.0))
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise AssumptionError("Lyapunov solution is not positive definite") from None
    return LyapunovCertificate(P, residual, iterations)
