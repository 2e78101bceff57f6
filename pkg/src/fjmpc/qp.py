"""Dense convex QP solver (ADMM operator splitting).

Solves::

    minimize    0.5 z' H z + g' z
    subject to  G z <= h
                lower <= z <= upper

The constraints are stacked as ``l <= A z <= u`` with ``A = [I; G]`` and
handled by the usual splitting: a regularized linear solve for ``z``, a
projection of the slack onto the bounds, and a dual ascent step. Data are
equilibrated (Ruiz) before iterating; the linear-system inverse depends
only on ``H``, ``G`` and the penalty, so a :class:`QpWorkspace` can carry
it across a sequence of problems that differ only in ``g``, ``h`` and the
bounds (as in receding-horizon control).
"""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import SolverError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"

REGULARIZATION = 1e-8
RELAXATION = 1.6
RHO_INIT, RHO_MIN, RHO_MAX = 1.0, 1e-6, 1e6
INF = np.inf
RESYNC_EVERY = 200
INVERSE_CACHE = 6
POLISH_STABLE = 2  # unchanged active-set guesses in a row before polishing

# read-only hessians already verified symmetric (receding-horizon reuse)
_CHECKED: "weakref.WeakValueDictionary[int, np.ndarray]" = weakref.WeakValueDictionary()


@dataclass(eq=False)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_matrix: np.ndarray
    ineq_bound: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        d = self.hessian.shape[0]
        self.linear = np.asarray(self.linear, dtype=float).reshape(d)
        G = np.asarray(self.ineq_matrix, dtype=float)
        self.ineq_matrix = G.reshape(-1, d) if G.size else np.zeros((0, d))
        self.ineq_bound = np.asarray(self.ineq_bound, dtype=float).reshape(self.ineq_matrix.shape[0])
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (d,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (d,)).copy()
        self.check()

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.ineq_matrix.shape[0]

    def check(self):
        H = self.hessian
        if H.shape != (self.dim, self.dim):
            raise SolverError("hessian must be square")
        if _CHECKED.get(id(H)) is not H:
            if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H), initial=0.0)):
                raise SolverError("hessian must be symmetric")
            if not H.flags.writeable:
                _CHECKED[id(H)] = H
        if np.any(self.lower > self.upper):
            raise SolverError("empty box: some lower bound exceeds its upper bound")

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.hessian @ z + self.linear @ z)


@dataclass(eq=False)
class QpSolution:
    z_star: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    duals: np.ndarray
    box_duals: np.ndarray
    rho: float = 1.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(problem: QpProblem, z, duals) -> tuple[float, float, float]:
    """Max-abs stationarity, feasibility and complementarity residuals.

    Box multipliers are not inputs: they are the split of the stationarity
    gap ``r = H z + g + G' mu`` into its lower (``r > 0``) and upper
    (``r < 0``) parts, which are then charged against complementarity.
    A side with an infinite bound cannot carry a multiplier, so its part of
    ``r`` stays in the stationarity residual.
    """
    z = np.asarray(z, dtype=float)
    mu = np.asarray(duals, dtype=float).reshape(problem.n_ineq)
    G, h = problem.ineq_matrix, problem.ineq_bound
    lo, up = problem.lower, problem.upper
    r = problem.hessian @ z + problem.linear + G.T @ mu
    nu_l = np.where(np.isfinite(lo), np.maximum(r, 0.0), 0.0)
    nu_u = np.where(np.isfinite(up), np.maximum(-r, 0.0), 0.0)
    stationarity = np.max(np.abs(r - nu_l + nu_u), initial=0.0)

    slack = h - G @ z
    feasibility = max(
        np.max(np.maximum(lo - z, 0.0), initial=0.0),
        np.max(np.maximum(z - up, 0.0), initial=0.0),
        np.max(np.maximum(-slack, 0.0), initial=0.0),
        np.max(np.maximum(-mu, 0.0), initial=0.0),
    )
    gap_l = np.where(np.isfinite(lo), z - lo, 0.0)
    gap_u = np.where(np.isfinite(up), up - z, 0.0)
    complementarity = max(
        np.max(np.abs(mu * slack), initial=0.0),
        np.max(np.abs(nu_l * gap_l), initial=0.0),
        np.max(np.abs(nu_u * gap_u), initial=0.0),
    )
    return float(stationarity), float(feasibility), float(complementarity)


def _spd_inverse(K: np.ndarray) -> np.ndarray:
    c, info = lapack.dpotrf(K, lower=0)
    if info != 0:
        raise SolverError("ADMM linear system is not positive definite")
    inv, info = lapack.dpotri(c, lower=0)
    if info != 0:
        raise SolverError("failed to invert the ADMM linear system")
    return np.triu(inv) + np.triu(inv, 1).T


class QpWorkspace:
    """Scaling and factorization cache for problems sharing ``H`` and ``G``."""

    def __init__(self, hessian: np.ndarray, ineq_matrix: np.ndarray, ruiz_iter: int = 15):
        self.hessian = hessian
        self.ineq_matrix = ineq_matrix
        d = hessian.shape[0]
        m = ineq_matrix.shape[0]
        self.d, self.m = d, m
        self._scale(ruiz_iter)
        H = self.D[:, None] * hessian * self.D[None, :] * self.cost_scale
        self.H_hat = H
        G_hat = self.E_g[:, None] * ineq_matrix * self.D[None, :]
        self.box_diag = self.E_b * self.D
        if m and np.count_nonzero(G_hat) < 0.2 * G_hat.size:
            self.G_hat = sp.csr_matrix(G_hat)
            self.G_hat_T = sp.csr_matrix(G_hat.T)
        else:
            self.G_hat = G_hat
            self.G_hat_T = np.ascontiguousarray(G_hat.T)
        self._gram = G_hat.T @ G_hat if m else np.zeros((d, d))
        self._inverses: dict[float, np.ndarray] = {}

    def matches(self, problem: QpProblem) -> bool:
        if problem.hessian is not self.hessian and not np.array_equal(problem.hessian, self.hessian):
            return False
        G = problem.ineq_matrix
        return G is self.ineq_matrix or (G.shape == self.ineq_matrix.shape
                                         and np.array_equal(G, self.ineq_matrix))

    def _scale(self, iterations: int):
        H = np.abs(self.hessian)
        G = np.abs(self.ineq_matrix)
        d, m = self.d, self.m
        D = np.ones(d)
        E_b = np.ones(d)
        E_g = np.ones(m)
        for _ in range(iterations):
            Hs = D[:, None] * H * D[None, :]
            Gs = E_g[:, None] * G * D[None, :]
            col = np.maximum(Hs.max(axis=0), E_b * D)
            if m:
                col = np.maximum(col, Gs.max(axis=0))
            row_b = E_b * D
            row_g = Gs.max(axis=1) if m else np.zeros(0)
            D = D / np.sqrt(np.where(col > 1e-8, col, 1.0))
            E_b = E_b / np.sqrt(np.where(row_b > 1e-8, row_b, 1.0))
            E_g = E_g / np.sqrt(np.where(row_g > 1e-8, row_g, 1.0))
        Hs = D[:, None] * H * D[None, :]
        mean_col = float(np.mean(Hs.max(axis=0))) if d else 1.0
        self.cost_scale = 1.0 / mean_col if mean_col > 1e-8 else 1.0
        self.D, self.E_b, self.E_g = D, E_b, E_g

    def inverse(self, rho: float) -> np.ndarray:
        inv = self._inverses.get(rho)
        if inv is None:
            K = self.H_hat + np.diag(REGULARIZATION + rho * self.box_diag ** 2) + rho * self._gram
            inv = _spd_inverse(K)
            if len(self._inverses) >= INVERSE_CACHE:
                self._inverses.pop(next(iter(self._inverses)))
            self._inverses[rho] = inv
        return inv

    # scaled A = [diag(box_diag); G_hat]
    def A(self, x):
        return np.concatenate([self.box_diag * x, self.G_hat @ x])

    def AT(self, w):
        return self.box_diag * w[: self.d] + self.G_hat_T @ w[self.d:]


def solve_qp(problem: QpProblem, tol_p: float = 1e-8, tol_d: float = 1e-8,
             max_iter: int = 50_000, *, warm_start: Optional[tuple] = None,
             workspace: Optional[QpWorkspace] = None, rho: Optional[float] = None,
             adapt_every: int = 25, check_every: Optional[int] = None,
             polish: bool = False,
             callback: Optional[Callable[[int, np.ndarray, float], None]] = None) -> QpSolution:
    """Solve a box- and inequality-constrained convex QP.

    Parameters
    ----------
    problem : QpProblem
    tol_p, tol_d : float
        Absolute tolerances on the primal residual ``||A z - s||_inf`` and
        the dual residual ``||H z + g + A' y||_inf`` (unscaled problem).
    max_iter : int
    warm_start : (z, duals) or (z, duals, box_duals), optional
        Starting primal point and multipliers in the original scaling.
    workspace : QpWorkspace, optional
        Reused scaling and factorizations; rebuilt if it does not match.
    rho : float, optional
        Initial ADMM penalty (scaled problem), 1.0 by default.
    polish : bool
        Whenever the active set guessed from the iterate stays unchanged
        over three residual checks (and once more at the end), solve the
        reduced KKT system of that active set directly. A polished point
        that meets both tolerances (with correct multiplier signs) ends the
        iteration with status optimal.
    callback : callable, optional
        Called as ``callback(iteration, z, objective)`` at each residual check.

    Returns
    -------
    QpSolution
        ``z_star`` lies in the box exactly. With status ``max_iterations``
        the iterate with the smallest residuals seen is returned.
    """
    d, m = problem.dim, problem.n_ineq
    if workspace is None or not workspace.matches(problem):
        workspace = QpWorkspace(problem.hessian, problem.ineq_matrix)
    ws = workspace
    D, c = ws.D, ws.cost_scale
    E = np.concatenate([ws.E_b, ws.E_g])
    if check_every is None:
        check_every = 1 if d <= 100 else 10
    rho = RHO_INIT if rho is None else float(rho)

    l = np.concatenate([problem.lower, np.full(m, -INF)])
    u = np.concatenate([problem.upper, problem.ineq_bound])
    l_hat, u_hat = E * l, E * u
    g_hat = c * D * problem.linear

    if warm_start is not None:
        z0 = np.asarray(warm_start[0], dtype=float)
        mu0 = np.asarray(warm_start[1], dtype=float) if len(warm_start) > 1 else np.zeros(m)
        nu0 = np.asarray(warm_start[2], dtype=float) if len(warm_start) > 2 else np.zeros(d)
        x = z0 / D
        y = c * np.concatenate([nu0, mu0]) / E
    else:
        x = np.zeros(d)
        y = np.zeros(d + m)
    s = np.clip(ws.A(x), l_hat, u_hat)

    inv = ws.inverse(rho)
    sigma = REGULARIZATION
    Hx = ws.H_hat @ x
    best = None
    polished = None
    last_guess = tried_guess = None
    stable = 0
    status = MAX_ITERATIONS
    it = 0
    y_prev = y.copy()
    for it in range(1, max_iter + 1):
        rhs = sigma * x - g_hat + ws.AT(rho * s - y)
        x_tilde = inv @ rhs
        s_tilde = ws.A(x_tilde)
        # H x_tilde falls out of the linear system, sparing a dense product
        Hx_tilde = rhs - sigma * x_tilde - rho * ws.AT(s_tilde)
        x = RELAXATION * x_tilde + (1.0 - RELAXATION) * x
        Hx = RELAXATION * Hx_tilde + (1.0 - RELAXATION) * Hx
        s_relax = RELAXATION * s_tilde + (1.0 - RELAXATION) * s
        s_new = np.clip(s_relax + y / rho, l_hat, u_hat)
        y = y + rho * (s_relax - s_new)
        s = s_new
        if it % RESYNC_EVERY == 0:
            Hx = ws.H_hat @ x

        if it % check_every and it % adapt_every and it != max_iter:
            continue

        # unscaled residuals
        Ax_hat = ws.A(x)
        z = D * x
        r_p = float(np.max(np.abs((Ax_hat - s) / E), initial=0.0))
        # H z + g + A' y in the original scaling is (H_hat x + g_hat + A_hat' y) / (D c)
        r_d = float(np.max(np.abs((Hx + g_hat + ws.AT(y)) / (D * c)), initial=0.0))
        z_box = np.clip(z, problem.lower, problem.upper)
        if callback is not None:
            callback(it, z_box, problem.objective(z_box))
        score = max(r_p / tol_p, r_d / tol_d)
        if best is None or score < best[0]:
            best = (score, z_box, E * y / c, r_p, r_d, it)
        if r_p <= tol_p and r_d <= tol_d:
            status = OPTIMAL
            break
        if polish:
            y_now = E * y / c
            guess = _active_signature(problem, z_box, y_now[d:], y_now[:d])
            stable = stable + 1 if guess == last_guess else 0
            last_guess = guess
            if stable >= POLISH_STABLE and guess != tried_guess:
                tried_guess = guess
                polished = _polish(problem, z_box, y_now[d:], y_now[:d], tol_p, tol_d)
                if polished is not None:
                    break

        if _primal_infeasible(y - y_prev, ws, l_hat, u_hat):
            status = INFEASIBLE
            break
        y_prev = y.copy()

        if it % adapt_every == 0:
            new_rho = _balanced_rho(rho, Ax_hat, s, y, Hx, g_hat, ws)
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                inv = ws.inverse(rho)

    if best is None:
        z_out, y_out, r_p, r_d = np.clip(D * x, problem.lower, problem.upper), E * y / c, INF, INF
    else:
        _, z_out, y_out, r_p, r_d, _ = best
    if polish and status != INFEASIBLE and polished is None:
        polished = _polish(problem, z_out, y_out[d:], y_out[:d], tol_p, tol_d)
    if polished is not None:
        # polished points meet both tolerances by construction
        z_out, mu_p, nu_p, r_p, r_d = polished
        y_out = np.concatenate([nu_p, mu_p])
        status = OPTIMAL
    if status == MAX_ITERATIONS:
        log.debug("QP hit max_iter=%d (r_p=%.2e, r_d=%.2e)", max_iter, r_p, r_d)
    return QpSolution(
        z_star=z_out,
        objective=problem.objective(z_out),
        status=status,
        primal_residual=r_p,
        dual_residual=r_d,
        iterations=it,
        duals=y_out[d:],
        box_duals=y_out[:d],
        rho=rho,
    )


def _balanced_rho(rho, Ax, s, y, Hx, g_hat, ws):
    norm = lambda v: float(np.max(np.abs(v), initial=0.0))
    prim = norm(Ax - s) / max(norm(Ax), norm(s), 1e-12)
    ATy = ws.AT(y)
    dual = norm(Hx + g_hat + ATy) / max(norm(Hx), norm(ATy), norm(g_hat), 1e-12)
    if dual <= 0 or prim <= 0:
        return rho
    target = float(np.clip(rho * np.sqrt(prim / dual), RHO_MIN, RHO_MAX))
    # snap to a half-decade grid so cached factorizations get reused
    return float(10.0 ** (np.round(2.0 * np.log10(target)) / 2.0))


def _primal_infeasible(dy, ws, l_hat, u_hat, eps: float = 1e-9) -> bool:
    scale = float(np.max(np.abs(dy), initial=0.0))
    if scale <= 1e-12:
        return False
    if np.max(np.abs(ws.AT(dy)), initial=0.0) > eps * scale:
        return False
    pos, neg = dy > 0, dy < 0
    if np.any(np.isinf(u_hat[pos])) or np.any(np.isinf(l_hat[neg])):
        return False
    support = float(u_hat[pos] @ dy[pos] + l_hat[neg] @ dy[neg])
    return support < -eps * scale


def _active_sets(problem: QpProblem, z, mu, nu):
    # a constraint counts as active when its multiplier outweighs its slack
    lo, up = problem.lower, problem.upper
    at_lo = (lo == up) | (np.isfinite(lo) & ((z - lo) < -nu))
    at_up = ~at_lo & np.isfinite(up) & ((up - z) < nu)
    act = (problem.ineq_bound - problem.ineq_matrix @ z) < mu
    return at_lo, at_up, act


def _active_signature(problem: QpProblem, z, mu, nu) -> bytes:
    return b"".join(np.packbits(a).tobytes() for a in _active_sets(problem, z, mu, nu))


def _polish(problem: QpProblem, z, mu, nu, tol_p, tol_d, passes: int = 2, reg: float = 1e-11):
    """Refine an approximate solution by solving the KKT system of its active set.

    The active set is guessed from the iterate and then corrected for a few
    primal-dual active-set passes. Returns ``(z, mu, nu, r_p, r_d)`` or
    ``None`` when no primal and dual feasible point was found.
    """
    H, g, G, h = problem.hessian, problem.linear, problem.ineq_matrix, problem.ineq_bound
    lo, up = problem.lower, problem.upper
    pinned = lo == up
    z, mu, nu = np.asarray(z, float), np.asarray(mu, float), np.asarray(nu, float)
    previous = None
    for _ in range(passes):
        at_lo, at_up, act = _active_sets(problem, z, mu, nu)
        key = (at_lo.tobytes(), at_up.tobytes(), act.tobytes())
        if key == previous:
            return None
        previous = key
        solved = _solve_active(H, g, G, h, lo, up, at_lo, at_up, act, reg)
        if solved is None:
            return None
        z, mu, r = solved
        free = ~(at_lo | at_up)
        nu = np.where(free, 0.0, -r)
        slack = h - G @ z
        r_p = max(float(np.max(np.maximum(-slack, 0.0), initial=0.0)),
                  float(np.max(np.maximum(lo - z, 0.0), initial=0.0)),
                  float(np.max(np.maximum(z - up, 0.0), initial=0.0)))
        r_d = float(np.max(np.abs(r[free]), initial=0.0))
        # multiplier signs: mu >= 0, a lower bound pushes up (r >= 0), an upper one down
        sign = max(float(np.max(-mu, initial=0.0)),
                   float(np.max(-r[at_lo & ~pinned], initial=0.0)),
                   float(np.max(r[at_up], initial=0.0)))
        if r_p <= tol_p and sign <= tol_d and r_d <= tol_d:
            return np.clip(z, lo, up), mu, nu, r_p, r_d
    return None


def _solve_active(H, g, G, h, lo, up, at_lo, at_up, act, reg):
    """Minimize over the face where the guessed constraints hold with equality."""
    fixed = at_lo | at_up
    z = np.where(at_lo, lo, np.where(at_up, up, 0.0))
    F = np.flatnonzero(~fixed)
    mu = np.zeros(G.shape[0])
    if F.size:
        X = np.flatnonzero(fixed)
        q = g[F] + H[np.ix_(F, X)] @ z[X]
        rows = np.flatnonzero(act)
        G_A = G[np.ix_(rows, F)]
        b = h[rows] - G[np.ix_(rows, X)] @ z[X]
        try:
            fac = sla.cho_factor(H[np.ix_(F, F)] + reg * np.eye(F.size), check_finite=False)
            z_F = -sla.cho_solve(fac, q, check_finite=False)
            if rows.size:
                W = sla.cho_solve(fac, G_A.T, check_finite=False)
                S = G_A @ W
                S[np.diag_indices_from(S)] += reg * max(1.0, float(np.max(np.diag(S))))
                mu_A = sla.solve(S, G_A @ z_F - b, assume_a="pos", check_finite=False)
                z_F = z_F - W @ mu_A
                mu[rows] = mu_A
        except (np.linalg.LinAlgError, ValueError):
            return None
        z[F] = z_F
    elif np.any(act):
        return None
    return z, mu, H @ z + g + G.T @ mu
