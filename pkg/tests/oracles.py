"""Reference computations that do not share code paths with the package."""
import numpy as np


def fixed_point_equilibrium(lam, P, u, tol=1e-15, max_iter=1_000_000):
    """Iterate ``x <- Lambda P x + (I - Lambda) u`` until it stops moving."""
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(u, dtype=float).copy()
    for _ in range(max_iter):
        nxt = lam * (P @ x) + (1.0 - lam) * u
        if np.max(np.abs(nxt - x)) <= tol:
            return nxt
        x = nxt
    raise RuntimeError("fixed point iteration did not settle")


def lyapunov_kron(a, q):
    """Solve ``a' P a - P + q = 0`` through the Kronecker linear system."""
    m = a.shape[0]
    K = np.eye(m * m) - np.kron(a.T, a.T)
    vec = np.linalg.solve(K, q.reshape(-1, order="F"))
    P = vec.reshape(m, m, order="F")
    return 0.5 * (P + P.T)


def iir_memory(tau, history):
    """Direct sum ``sum_j (1-k) k^j u(t-j-1)`` with explicit powers."""
    k = np.exp(-1.0 / tau)
    total = 0.0
    for j, u in enumerate(reversed(list(history))):
        total = total + (1.0 - k) * k ** j * np.asarray(u, dtype=float)
    return total


def dual_projected_gradient(H, g, G, h, lo, up, max_iter=1_000_000, tol=1e-11):
    """Accelerated projected gradient on the dual of a strictly convex QP.

    All constraints (rows of ``G`` and both box sides) are dualized, so the
    dual feasible set is the nonnegative orthant and the projection is a
    clamp. Returns ``(z, f_star, iterations)`` where ``f_star`` is the dual
    value (a lower bound on the primal optimum, tight at convergence).
    """
    H = np.asarray(H, dtype=float)
    d = H.shape[0]
    C = np.vstack([G, np.eye(d), -np.eye(d)])
    c = np.concatenate([h, up, -lo])
    keep = np.isfinite(c)
    C, c = C[keep], c[keep]
    Hinv = np.linalg.inv(H)
    # row scaling of the constraints preconditions the dual (a diagonal change of variables)
    scale = 1.0 / np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", C, Hinv, C), 1e-12))
    C, c = C * scale[:, None], c * scale
    M = C @ Hinv @ C.T
    M = 0.5 * (M + M.T)
    L = max(np.linalg.eigvalsh(M).max(), 1e-12)
    z_free = -Hinv @ g
    b = C @ z_free - c  # dual gradient is b - M lam

    def primal(lam):
        return z_free - Hinv @ (C.T @ lam)

    lam = np.zeros(C.shape[0])
    y = lam.copy()
    t = 1.0
    step = 1.0 / L
    for it in range(1, max_iter + 1):
        nxt = y + step * (b - M @ y)
        np.maximum(nxt, 0.0, out=nxt)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        diff = nxt - lam
        y = nxt + ((t - 1.0) / t_next) * diff
        if diff @ (y - nxt) > 0:  # adaptive restart
            y, t_next = nxt.copy(), 1.0
        lam, t = nxt, t_next
        if it % 50 == 0:
            z = primal(lam)
            viol = np.max(C @ z - c, initial=0.0)
            primal_val = 0.5 * z @ H @ z + g @ z
            val = primal_val + lam @ (C @ z - c)
            if viol <= tol and abs(primal_val - val) <= tol * max(1.0, abs(val)):
                return z, val, it
    z = primal(lam)
    return z, 0.5 * z @ H @ z + g @ z + lam @ (C @ z - c), max_iter


def random_qp(rng, d=None, m=None):
    """Feasible strictly convex QP with box bounds and ``m`` inequality rows."""
    d = int(rng.integers(1, 9)) if d is None else d
    m = int(rng.integers(0, 13)) if m is None else m
    A = rng.standard_normal((d, d))
    H = A.T @ A + 0.1 * np.eye(d)
    g = rng.standard_normal(d) * 3.0
    lo = -rng.uniform(0.2, 2.0, size=d)
    up = rng.uniform(0.2, 2.0, size=d)
    z0 = rng.uniform(lo, up)
    G = rng.standard_normal((m, d))
    h = G @ z0 + rng.uniform(0.0, 0.5, size=m)
    return H, g, G, h, lo, up


def simulate_plan(lam, P, u_o, rho, gamma, omega0, x0, mem0, us_plan, ul_plan):
    """Roll a plan forward with plain loops over agents."""
    n = len(x0)
    xs, ms = [np.array(x0, float)], [np.array(mem0, float)]
    for us, ul in zip(us_plan, ul_plan):
        x, m = xs[-1], ms[-1]
        nx = np.empty(n)
        for i in range(n):
            u = u_o[i] + rho[i] * m[i] + (1 - rho[i]) * us[i]
            nx[i] = lam[i] * sum(P[i, j] * x[j] for j in range(n)) + (1 - lam[i]) * u
        xs.append(nx)
        ms.append(gamma * m + omega0 * np.asarray(ul))
    return np.array(xs), np.array(ms)
