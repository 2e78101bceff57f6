"""Random instance factories shared by the test modules."""
import numpy as np

from fjmpc import InfluenceNetwork, build_influence_matrix


def random_network(seed, n=None, max_n=20, lam_range=(0.0, 0.95), rho=None, bias_range=(0.0, 1.0),
                   self_loops=False):
    """A valid random network: every agent listens to at least one other agent."""
    rng = np.random.default_rng(seed)
    if n is None:
        n = int(rng.integers(2, max_n + 1))
    edges = set()
    for w in range(n):
        others = [v for v in range(n) if v != w or (self_loops or n == 1)]
        k = int(rng.integers(1, min(len(others), 4) + 1))
        for v in rng.choice(others, size=k, replace=False):
            edges.add((w, int(v)))
    cred = rng.uniform(0.1, 1.0, size=n)
    P = build_influence_matrix(edges, cred)
    lam = rng.uniform(*lam_range, size=n)
    u_o = rng.uniform(*bias_range, size=n)
    rho_v = rng.uniform(0.0, 1.0, size=n) if rho is None else np.full(n, float(rho))
    return InfluenceNetwork(frozenset(edges), P, lam, u_o, rho_v, credibility=cred)


def scalar_network(lam, u_o, rho=0.5):
    """Single agent listening to itself."""
    return InfluenceNetwork(frozenset({(0, 0)}), np.array([[1.0]]), np.array([lam]),
                            np.array([u_o]), np.array([rho]))


def feasible_constant_inputs(net, rng, fill=0.9):
    """Constant (u_s, u_l) whose limit incentive stays inside the headroom."""
    n = net.n_agents
    headroom = 1.0 - net.inherent_bias
    share = rng.uniform(0.0, fill, size=n) * headroom
    split = rng.uniform(0.0, 1.0, size=n)
    rho = net.persistence_weight
    u_s = np.where(rho < 1, np.minimum(1.0, split * share / np.maximum(1.0 - rho, 1e-12)), 0.0)
    u_l = np.where(rho > 0, np.minimum(1.0, (1.0 - split) * share / np.maximum(rho, 1e-12)), 0.0)
    return u_s, u_l
