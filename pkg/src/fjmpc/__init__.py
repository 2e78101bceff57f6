"""Incentive design for Friedkin-Johnsen opinion dynamics with memory and a budget."""

__version__ = "0.1.0"

from .analysis import (EquilibriumResult, LyapunovCertificate, fj_equilibrium, forced_equilibrium,
                       solve_discrete_lyapunov)
from .budget import BudgetLedger, cumulative_spend, remaining_budget, step_spend
from .config import ScenarioConfig, SweepSpec, parse_config, parse_sweep, serialize_config
from .dynamics import (AugmentedModel, IncentiveInput, MemoryKernel, SimState, Trajectory,
                       assemble_augmented, effective_input, estimate_inclination,
                       memory_convolution, simulate_trajectory)
from .errors import (AssumptionError, BudgetViolation, ConfigError, ConvergenceError,
                     DesignViolation, FjmpcError, KernelError, NetworkError, SolverError)
from .network import (CredibilityProfile, GeneratorParams, InfluenceNetwork, build_influence_matrix,
                      generate_synthetic_network, read_network, spectral_radius, validate_network,
                      write_network)
from .policy import (CondensedMpc, MpcConfig, MpcController, PolicySchedule, RunSummary,
                     assemble_mpc_qp, mpc_step, naive_policy, run_naive, run_receding_horizon,
                     summarize_run)
from .qp import QpProblem, QpSolution, QpWorkspace, solve_qp
from .report import emit_report
from .sweep import run_sweep
