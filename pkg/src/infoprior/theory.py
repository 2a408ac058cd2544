"""Exact tabular machinery: policy evaluation, state abstractions with
measured reward/transition losses, and the value-difference bound check,
plus the empowerment-only probe experiment.

Everything here is computed by direct linear algebra on explicit tensors;
these are the oracles the rest of the library is validated against.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng

_ROW_TOL = 1e-12


@dataclass
class TabularMDP:
    """Finite MDP with transition tensor P[s, a, s'] and reward table R[s, a].

    Rewards are treated as deterministic per (s, a); R holds the values.
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        S, A, S2 = self.P.shape
        if S != S2 or self.R.shape != (S, A):
            raise ValueError(f"inconsistent shapes P{self.P.shape} R{self.R.shape}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        rows = self.P.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if np.any(self.P < 0):
            raise ValueError("transition probabilities must be nonnegative")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]


def _policy_matrices(mdp, policy):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape must be (S, A)")
    P_pi = np.einsum("sa,sat->st", policy, mdp.P)
    R_pi = (policy * mdp.R).sum(axis=1)
    return P_pi, R_pi


def exact_q(mdp, policy):
    """Exact Q for a stochastic policy via direct linear solve.

    Satisfies the Bellman equation to residual < 1e-10 at every (s, a).
    """
    P_pi, R_pi = _policy_matrices(mdp, policy)
    S = mdp.n_states
    V = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi, R_pi)
    return mdp.R + mdp.gamma * (mdp.P @ V)


def bellman_residual(mdp, policy, Q):
    policy = np.asarray(policy, dtype=np.float64)
    V = (policy * Q).sum(axis=1)
    return float(np.max(np.abs(Q - (mdp.R + mdp.gamma * (mdp.P @ V)))))


def discounted_occupancy(mdp, policy, init=None):
    """Normalized discounted state-action visitation d(s, a).

    d(s) = (1-gamma) * sum_t gamma^t P(s_t = s); d(s, a) = d(s) pi(a|s).
    """
    policy = np.asarray(policy, dtype=np.float64)
    S = mdp.n_states
    mu = np.full(S, 1.0 / S) if init is None else np.asarray(init, dtype=np.float64)
    P_pi, _ = _policy_matrices(mdp, policy)
    d_state = (1.0 - mdp.gamma) * np.linalg.solve(np.eye(S) - mdp.gamma * P_pi.T, mu)
    return d_state[:, None] * policy


def monte_carlo_q(mdp, policy, s0, a0, n_rollouts, length, seed):
    """Monte-Carlo estimate of Q(s0, a0); returns (mean, standard error)."""
    policy = np.asarray(policy, dtype=np.float64)
    g = rng.stream(seed, "mc")
    S = mdp.n_states
    returns = np.zeros(n_rollouts)
    state = np.full(n_rollouts, s0)
    action = np.full(n_rollouts, a0)
    disc = 1.0
    pol_cdf = np.cumsum(policy, axis=1)
    for t in range(length):
        returns += disc * mdp.R[state, action]
        cdf = np.cumsum(mdp.P[state, action], axis=1)
        state = (cdf < g.random((n_rollouts, 1))).sum(axis=1)
        action = (pol_cdf[state] < g.random((n_rollouts, 1))).sum(axis=1)
        disc *= mdp.gamma
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(n_rollouts))


@dataclass
class LatentAbstraction:
    """Map from states to latent cells; rows of ``assign`` are distributions.

    A deterministic abstraction has one-hot rows.
    """

    assign: np.ndarray

    def __post_init__(self):
        self.assign = np.asarray(self.assign, dtype=np.float64)
        if self.assign.ndim != 2:
            raise ValueError("assign must be (S, M)")
        if np.any(self.assign < 0) or np.max(np.abs(self.assign.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ValueError("assign rows must be distributions")

    @property
    def n_cells(self):
        return self.assign.shape[1]


@dataclass
class AbstractionLosses:
    L_R: float
    L_T: float
    K: float
    latent_mdp: TabularMDP
    latent_policy: np.ndarray
    weights: np.ndarray         # (M, S) aggregation weights within cells
    occupancy: np.ndarray       # (S, A)
    empty_cells: list = field(default_factory=list)


def _atom_mixture_kl(values, true_value, weights):
    # KL(delta_{true_value} || sum_i weights_i * delta_{values_i})
    mass = weights[values == true_value].sum()
    if mass <= 0.0:
        raise ValueError("true reward outside mixture support")
    return -np.log(mass)


def measure_losses(mdp, abstraction, policy):
    """Occupancy-weighted reward and transition KL losses of an abstraction.

    L_T compares the true next-state distribution lifted to latent cells
    against the aggregated latent model's prediction; L_R compares reward
    atoms the same way.  K is the span of the latent value function, the
    smallest constant for its total-variation Lipschitz property.
    """
    B = abstraction.assign
    S, A = mdp.n_states, mdp.n_actions
    M = abstraction.n_cells
    d = discounted_occupancy(mdp, policy)
    d_state = d.sum(axis=1)

    cell_mass = B.T @ d_state                        # (M,)
    empty = [int(m) for m in np.flatnonzero(cell_mass <= 0.0)]
    w = np.zeros((M, S))
    for m in range(M):
        if cell_mass[m] > 0.0:
            w[m] = B[:, m] * d_state / cell_mass[m]
        else:
            w[m] = B[:, m] / max(B[:, m].sum(), 1e-300)  # excluded cells: uniform note

    p_lift = np.einsum("sat,tm->sam", mdp.P, B)      # (S, A, M)
    P_hat = np.einsum("ms,san->man", w, p_lift)      # (M, A, M)
    R_hat = w @ mdp.R                                # (M, A)
    pol_hat = w @ np.asarray(policy, dtype=np.float64)
    pol_hat = pol_hat / pol_hat.sum(axis=1, keepdims=True)

    L_T = 0.0
    L_R = 0.0
    for s in range(S):
        for m in np.flatnonzero(B[s] > 0):
            if m in empty:
                continue
            for a in range(A):
                mass = d[s, a] * B[s, m]
                if mass <= 0.0:
                    continue
                p = p_lift[s, a]
                q = P_hat[m, a]
                sup = p > 0
                L_T += mass * float(np.sum(p[sup] * np.log(p[sup] / q[sup])))
                members = np.flatnonzero(B[:, m] > 0)
                L_R += mass * _atom_mixture_kl(
                    mdp.R[members, a], mdp.R[s, a], w[m, members]
                )

    P_hat = np.clip(P_hat, 0.0, None)
    P_hat = P_hat / P_hat.sum(axis=2, keepdims=True)
    latent = TabularMDP(P=P_hat, R=R_hat, gamma=mdp.gamma)
    Q_hat = exact_q(latent, pol_hat)
    V_hat = (pol_hat * Q_hat).sum(axis=1)
    K = float(V_hat.max() - V_hat.min())
    return AbstractionLosses(
        L_R=float(L_R), L_T=float(L_T), K=K, latent_mdp=latent,
        latent_policy=pol_hat, weights=w, occupancy=d, empty_cells=empty,
    )


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    L_R: float
    L_T: float
    K: float
    holds: bool
    worst_gap: float

    def to_dict(self):
        return {
            "lhs": self.lhs, "rhs": self.rhs, "L_R": self.L_R, "L_T": self.L_T,
            "K": self.K, "holds": self.holds, "worst_gap": self.worst_gap,
        }


def value_difference_check(mdp, abstraction, policy, inflate_lhs=0.0):
    """Check E_d[Q - Q_hat] <= (sqrt(L_R) + gamma K sqrt(L_T)) / (1 - gamma).

    ``inflate_lhs`` is a fault-injection hook for negative-control tests.
    """
    losses = measure_losses(mdp, abstraction, policy)
    Q = exact_q(mdp, policy)
    Q_hat = exact_q(losses.latent_mdp, losses.latent_policy)
    B = abstraction.assign
    d = losses.occupancy
    lhs = 0.0
    worst = -np.inf
    for s in range(mdp.n_states):
        for m in np.flatnonzero(B[s] > 0):
            for a in range(mdp.n_actions):
                mass = d[s, a] * B[s, m]
                gap = Q[s, a] - Q_hat[m, a]
                lhs += mass * gap
                if mass > 0 and gap > worst:
                    worst = gap
    lhs = float(lhs) + inflate_lhs
    rhs = float(
        (np.sqrt(losses.L_R) + mdp.gamma * losses.K * np.sqrt(losses.L_T))
        / (1.0 - mdp.gamma)
    )
    return BoundReport(
        lhs=lhs, rhs=rhs, L_R=losses.L_R, L_T=losses.L_T, K=losses.K,
        holds=bool(lhs <= rhs + 1e-9), worst_gap=float(worst),
    )


def random_mdp(n_states, n_actions, seed, gamma=0.9):
    """Random MDP: Dirichlet(1) transition rows, uniform [0,1] rewards."""
    g = rng.stream(seed, "mdp")
    P = g.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = g.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(P=P, R=R, gamma=gamma)


def random_abstraction(n_states, n_cells, seed):
    """Deterministic abstraction: random surjection of states onto cells."""
    g = rng.stream(seed, "abs")
    cells = np.concatenate([np.arange(n_cells), g.integers(n_cells, size=n_states - n_cells)])
    g.shuffle(cells)
    assign = np.zeros((n_states, n_cells))
    assign[np.arange(n_states), cells] = 1.0
    return LatentAbstraction(assign=assign)


def random_cell_policy(abstraction, n_actions, seed):
    """Random stochastic policy measurable w.r.t. the abstraction's cells."""
    g = rng.stream(seed, "pol")
    cell_pol = g.dirichlet(np.ones(n_actions), size=abstraction.n_cells)
    cells = abstraction.assign.argmax(axis=1)
    return cell_pol[cells]


def theorem3_suite(n_mdps=5, n_abstractions=3, n_states=16, n_actions=3,
                   n_cells=6, gamma=0.9, base_seed=1000, inflate_lhs=0.0):
    """The fixed random-instance suite for the value-difference bound.

    Returns one BoundReport per (MDP, abstraction) pair; seeds are pinned so
    the suite is reproducible.
    """
    reports = []
    for i in range(n_mdps):
        mdp = random_mdp(n_states, n_actions, seed=base_seed + i, gamma=gamma)
        for j in range(n_abstractions):
            abstraction = random_abstraction(n_states, n_cells, seed=base_seed + 100 * (i + 1) + j)
            policy = random_cell_policy(abstraction, n_actions, seed=base_seed + 10_000 + i * 10 + j)
            reports.append(value_difference_check(mdp, abstraction, policy,
                                                  inflate_lhs=inflate_lhs))
    return reports


def reports_to_json(reports):
    return json.dumps({"reports": [r.to_dict() for r in reports],
                       "all_hold": bool(all(r.holds for r in reports))}, indent=2)


def theorem1_probe_experiment(env_config, seeds=(0, 1, 2, 3), collect_episodes=30,
                              train_steps=1500, latent_dim=None, hidden=(32, 32),
                              trained=True):
    """Empowerment-only training followed by linear probes of each factor.

    Trains the world model with only the action-predictability term active
    (contrastive, forward-KL and reward losses off; rewards zeroed), then
    reports held-out linear-probe R^2 for the controllable factor, the
    reward-relevant exogenous factor, and the distractor.  ``trained=False``
    runs the same harness on the untrained encoder (negative control).
    """
    from . import envs as envs_mod
    from .agent import probe_dataset
    from .world_model import WorldModel, inverse_only_update
    from .metrics import linear_probe

    results = []
    for seed in seeds:
        episodes = [
            envs_mod.rollout(env_config, seed=seed * 1000 + e)
            for e in range(collect_episodes)
        ]
        d = latent_dim if latent_dim is not None else len(episodes[0].obs[0])
        model = WorldModel(
            obs_dim=episodes[0].obs.shape[1],
            action_count=env_config.action_count,
            latent_dim=min(d, 16),
            hidden=hidden,
            seed=seed,
            markov_encoder=True,
        )
        if trained:
            inverse_only_update(model, episodes, steps=train_steps, seed=seed)
        latents, splus, stilde, ds = probe_dataset(model, episodes, env_config, seed=seed)
        results.append({
            "seed": seed,
            "r2_splus": linear_probe(latents, splus, seed=seed).r2,
            "r2_stilde": linear_probe(latents, stilde, seed=seed).r2,
            "r2_ds": linear_probe(latents, ds, seed=seed).r2,
        })
    return results
