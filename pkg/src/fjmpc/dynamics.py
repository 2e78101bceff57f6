"""Memory kernels, opinion updates, augmented model and trajectory simulation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .budget import BudgetLedger
from .errors import BudgetViolation, DesignViolation, KernelError
from .network import InfluenceNetwork

DESIGN_TOL = 1e-12


@dataclass(frozen=True)
class MemoryKernel:
    """Exponential memory weights for long-term incentives.

    ``variant`` is ``"iir"`` (infinite window, weights ``(1-k) k**j``) or
    ``"fir"`` (window ``J``, weights renormalized to sum to one).
    """

    variant: str = "iir"
    tau: float = 3.0
    window: Optional[int] = None

    def __post_init__(self):
        variant = self.variant.lower()
        object.__setattr__(self, "variant", variant)
        if variant not in ("iir", "fir"):
            raise KernelError(f"unknown kernel variant {self.variant!r}")
        if not self.tau > 0:
            raise KernelError("tau must be positive")
        if variant == "fir" and (self.window is None or self.window < 1):
            raise KernelError("FIR kernel needs a positive integer window J")

    @property
    def kappa(self) -> float:
        return math.exp(-1.0 / self.tau)

    @property
    def gamma(self) -> float:
        """Memory decay factor of the recursion (equals ``kappa``)."""
        return self.kappa

    @property
    def omega0(self) -> float:
        return kernel_weights(self, 0)

    def weights(self, count: int) -> np.ndarray:
        """First ``count`` weights (truncated to the FIR window)."""
        if self.variant == "fir":
            count = min(count, self.window + 1)
        return np.array([kernel_weights(self, j) for j in range(count)])


def kernel_weights(kernel: MemoryKernel, j: int) -> float:
    if j < 0:
        raise KernelError("weight index must be nonnegative")
    k = kernel.kappa
    if kernel.variant == "iir":
        return (1.0 - k) * k ** j
    if j > kernel.window:
        raise KernelError(f"FIR weight index {j} exceeds window J={kernel.window}")
    return (1.0 - k) * k ** j / (1.0 - k ** (kernel.window + 1))


def memory_convolution(kernel: MemoryKernel, history: Sequence) -> np.ndarray | float:
    """Direct evaluation of the memory trace from past long-term inputs.

    ``history`` is ordered oldest first, ``history[-1]`` being ``u_l(t-1)``.
    Returns ``sum_j w_j u_l(t-j-1)`` over the available (window) terms, or
    ``0.0`` for an empty history.
    """
    if len(history) == 0:
        return 0.0
    H = np.asarray(history, dtype=float)
    w = kernel.weights(len(H))
    recent = H[::-1][: len(w)]
    return np.tensordot(w, recent, axes=(0, 0))


def design_headroom(u_o, rho, u_mem, u_s) -> np.ndarray:
    """Slack of the upper incentive bound ``1 - u_o - (rho*u_mem + (1-rho)*u_s)``."""
    return (1.0 - u_o) - (rho * u_mem + (1.0 - rho) * u_s)


def effective_input(u_o, rho, u_mem, u_s) -> np.ndarray:
    """Combine bias, memory trace and short-term input into ``u(t)``.

    Raises :class:`DesignViolation` instead of clipping when the incentive
    share leaves ``[0, 1 - u_o]`` for some agent.
    """
    u_o, rho, u_mem, u_s = (np.asarray(a, dtype=float) for a in (u_o, rho, u_mem, u_s))
    incentive = rho * u_mem + (1.0 - rho) * u_s
    upper = (1.0 - u_o) - incentive
    bad = np.flatnonzero((upper < -DESIGN_TOL) | (incentive < -DESIGN_TOL))
    if bad.size:
        margins = np.atleast_1d(np.minimum(upper, incentive))[bad]
        raise DesignViolation(
            "incentives exceed headroom for agents "
            + ", ".join(f"{a} (margin {m:.3g})" for a, m in zip(bad.tolist(), margins.tolist())),
            agents=bad.tolist(), margins=margins.tolist())
    return u_o + incentive


@dataclass(frozen=True, eq=False)
class SimState:
    t: int
    x: np.ndarray
    u_mem: np.ndarray


@dataclass(frozen=True, eq=False)
class IncentiveInput:
    u_s: np.ndarray
    u_l: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "IncentiveInput":
        return cls(np.zeros(n), np.zeros(n))


def _advance_x(net: InfluenceNetwork, x, u):
    lam = net.susceptibility
    return lam * (net.influence_matrix @ x) + (1.0 - lam) * u


def step(net: InfluenceNetwork, kernel: MemoryKernel, state: SimState,
         inp: IncentiveInput) -> SimState:
    """One update of opinions and the (IIR) memory trace."""
    if kernel.variant != "iir":
        raise KernelError("step() uses the memory recursion; FIR kernels need simulate_trajectory")
    u = effective_input(net.inherent_bias, net.persistence_weight, state.u_mem, inp.u_s)
    x_next = _advance_x(net, state.x, u)
    mem_next = kernel.gamma * state.u_mem + kernel.omega0 * np.asarray(inp.u_l, dtype=float)
    return SimState(state.t + 1, x_next, mem_next)


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    """Stacked dynamics of ``[x; u_mem]`` driven by ``u_s``, ``u_l`` and ``u_o``."""

    a_aug: np.ndarray
    b_s: np.ndarray
    b_l: np.ndarray
    b_o: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.b_s.shape[1]

    def advance(self, z, u_s, u_l, u_o):
        return self.a_aug @ z + self.b_s @ u_s + self.b_l @ u_l + self.b_o @ u_o


def assemble_augmented(net: InfluenceNetwork, kernel: MemoryKernel) -> AugmentedModel:
    # u_l(t) only reaches x through the memory at t+1, so no direct feedthrough
    if kernel.variant != "iir":
        raise KernelError("the augmented model requires the IIR kernel")
    n = net.n_agents
    lam = net.susceptibility
    rho = net.persistence_weight
    recv = 1.0 - lam
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = net.lambda_p
    A[:n, n:] = np.diag(recv * rho)
    A[n:, n:] = kernel.gamma * np.eye(n)
    b_s = np.zeros((2 * n, n))
    b_s[:n] = np.diag(recv * (1.0 - rho))
    b_l = np.zeros((2 * n, n))
    b_l[n:] = kernel.omega0 * np.eye(n)
    b_o = np.zeros((2 * n, n))
    b_o[:n] = np.diag(recv)
    return AugmentedModel(A, b_s, b_l, b_o)


# -- observations --------------------------------------------------------------

def sample_observation(x, seed: int, t: int) -> np.ndarray:
    """Bernoulli adoption events with success probability ``x``.

    Agent ``v`` always consumes the ``v``-th draw of the stream keyed by
    ``(seed, t)``, so draws do not depend on how many agents follow it.
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t,))))
    return (rng.random(x.shape) < x).astype(np.int8)


def estimate_inclination(observations: Sequence) -> np.ndarray:
    """Componentwise arithmetic mean of ``y(0..t)``."""
    if len(observations) == 0:
        raise ValueError("need at least one observation")
    return np.mean(np.asarray(observations, dtype=float), axis=0)


class RunningMean:
    """Constant-memory running mean of binary observations."""

    def __init__(self):
        self.count = 0
        self.mu = None

    def update(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        self.count += 1
        if self.mu is None:
            self.mu = y.copy()
        else:
            self.mu = self.mu + (y - self.mu) / self.count
        return self.mu


class LeakyIntegrator:
    """Exponentially weighted estimate ``mu <- decay*mu + (1-decay)*y``."""

    def __init__(self, decay: float):
        if not 0 <= decay < 1:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.mu = None

    def update(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.mu is None:
            self.mu = y.copy()
        else:
            self.mu = self.decay * self.mu + (1.0 - self.decay) * y
        return self.mu


# -- trajectories ----------------------------------------------------------------

Policy = Callable[[SimState, Optional[np.ndarray]], Optional[IncentiveInput]]


@dataclass(eq=False)
class Trajectory:
    """States ``x(0..T)`` plus the inputs and spends applied at ``0..T-1``."""

    states: list[SimState] = field(default_factory=list)
    inputs: list[IncentiveInput] = field(default_factory=list)
    effective: list[np.ndarray] = field(default_factory=list)
    spends: list[float] = field(default_factory=list)
    observations: list[np.ndarray] = field(default_factory=list)
    estimates: list[np.ndarray] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    def u_mem(self) -> np.ndarray:
        return np.array([s.u_mem for s in self.states])

    def u_s(self) -> np.ndarray:
        return np.array([i.u_s for i in self.inputs])

    def u_l(self) -> np.ndarray:
        return np.array([i.u_l for i in self.inputs])


def initial_state(net: InfluenceNetwork, x0=None) -> SimState:
    n = net.n_agents
    x = np.array(net.inherent_bias if x0 is None else np.broadcast_to(x0, (n,)), dtype=float)
    return SimState(0, x, np.zeros(n))


def simulate_constant(net: InfluenceNetwork, kernel: MemoryKernel, T: int, u_s=0.0, u_l=0.0,
                      state: SimState | None = None) -> SimState:
    """Final state after ``T`` steps of constant, unbudgeted inputs (IIR kernel).

    A lean loop for long horizons: no observations and no stored history.
    Under a constant long-term input the memory moves monotonically from its
    initial value towards ``u_l``, so the incentive headroom holds at every
    step iff it holds at both ends; only those two points are checked.
    """
    if kernel.variant != "iir":
        raise KernelError("simulate_constant uses the memory recursion (IIR kernels only)")
    if T < 0:
        raise ValueError("T must be nonnegative")
    n = net.n_agents
    if state is None:
        state = initial_state(net)
    u_s = np.broadcast_to(np.asarray(u_s, dtype=float), (n,))
    u_l = np.broadcast_to(np.asarray(u_l, dtype=float), (n,))
    u_o, rho = net.inherent_bias, net.persistence_weight
    for mem in (state.u_mem, u_l):
        effective_input(u_o, rho, mem, u_s)
    lp = net.lambda_p
    recv = 1.0 - net.susceptibility
    base = recv * (u_o + (1.0 - rho) * u_s)
    gain = recv * rho
    g, w0 = kernel.gamma, kernel.omega0
    x, mem = state.x.copy(), state.u_mem.copy()
    drive = w0 * u_l
    for _ in range(T):
        x = lp @ x + base + gain * mem
        mem = g * mem + drive
    return SimState(state.t + T, x, mem)


def simulate_trajectory(net: InfluenceNetwork, kernel: MemoryKernel, policy: Policy | None,
                        T: int, ledger: BudgetLedger | None = None, seed: int = 0,
                        x0=None, observe: bool = True, estimator=None) -> Trajectory:
    """Roll the model forward ``T`` steps under ``policy``.

    ``policy(state, mu)`` returns the input applied at ``state.t`` (``None``
    means no incentives); ``mu`` is the current inclination estimate, or
    ``None`` when ``observe`` is off. ``estimator`` defaults to
    :class:`RunningMean`. Spends are charged to ``ledger`` when given; a
    budget overdraft raises :class:`~fjmpc.errors.BudgetViolation` at the
    offending step. FIR kernels are simulated by direct convolution over
    the stored long-term input history. A budget overdraft is re-raised
    with the partial trajectory attached as ``exc.trajectory``.
    """
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    n = net.n_agents
    state = initial_state(net, x0)
    traj = Trajectory(states=[state])
    history: list[np.ndarray] = []
    estimator = RunningMean() if estimator is None else estimator
    mu = None
    for t in range(T):
        if observe:
            y = sample_observation(state.x, seed, t)
            traj.observations.append(y)
            mu = estimator.update(y).copy()
            traj.estimates.append(mu)
        inp = policy(state, mu) if policy is not None else None
        if inp is None:
            inp = IncentiveInput.zeros(n)
        if ledger is not None:
            try:
                traj.spends.append(ledger.charge(inp.u_s, inp.u_l))
            except BudgetViolation as exc:
                exc.trajectory = traj
                raise
        u = effective_input(net.inherent_bias, net.persistence_weight, state.u_mem, inp.u_s)
        x_next = _advance_x(net, state.x, u)
        if kernel.variant == "iir":
            mem_next = kernel.gamma * state.u_mem + kernel.omega0 * np.asarray(inp.u_l, dtype=float)
        else:
            history.append(np.asarray(inp.u_l, dtype=float))
            mem_next = np.asarray(memory_convolution(kernel, history)) * np.ones(n)
        state = SimState(t + 1, x_next, mem_next)
        traj.inputs.append(inp)
        traj.effective.append(u)
        traj.states.append(state)
    if observe:
        y = sample_observation(state.x, seed, T)
        traj.observations.append(y)
        traj.estimates.append(estimator.update(y).copy())
    return traj
