"""Factored distractor-MDP simulators.

State splits into a controllable factor (agent cell on a ring or grid,
moved by actions), a reward-relevant exogenous factor (a drifting goal
cell), and a distractor chain that neither responds to actions nor touches
the reward.  Observation renderers entangle all three factors.

Exogenous factors draw their noise from per-step counter-based streams, so
the distractor and goal trajectories are bit-identical for any two action
sequences under the same seed: action-independence holds by construction.
"""

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import rng
from .theory import TabularMDP

_RING_MOVES = [1, -1, 0, 2, -2, 3, -3]
_GRID_MOVES = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "ring"                 # ring | grid
    shape: tuple = (8,)
    action_count: int = 3
    goal_drift: float = 0.1            # per-step probability the goal moves
    distractor_dims: int = 2
    distractor_card: int = 8
    distractor_period: int = 50        # full resample every this many steps
    distractor_mode: str = "walk"      # walk | replay (pre-recorded agent motion)
    goal_coupling: float = 0.0         # optional pull of the agent toward the goal
    reward_mode: str = "sparse"        # sparse | dense
    obs_mode: str = "onehot"           # onehot | scrambled | image
    horizon: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.kind not in ("ring", "grid"):
            raise ConfigError(f"kind: unknown value {self.kind!r}")
        if self.kind == "ring" and len(self.shape) != 1:
            raise ConfigError(f"shape: ring needs one dim, got {self.shape}")
        if self.kind == "grid" and len(self.shape) != 2:
            raise ConfigError(f"shape: grid needs two dims, got {self.shape}")
        if any(s < 2 for s in self.shape):
            raise ConfigError(f"shape: every dim must be >= 2, got {self.shape}")
        moves = _RING_MOVES if self.kind == "ring" else _GRID_MOVES
        if not (1 <= self.action_count <= len(moves)):
            raise ConfigError(f"action_count: must be in 1..{len(moves)}")
        if not (0.0 <= self.goal_drift <= 1.0):
            raise ConfigError("goal_drift: must be a probability")
        if not (0.0 <= self.goal_coupling <= 1.0):
            raise ConfigError("goal_coupling: must be a probability")
        if self.distractor_dims < 0:
            raise ConfigError("distractor_dims: must be >= 0")
        if self.distractor_card < 2:
            raise ConfigError("distractor_card: must be >= 2")
        if self.distractor_period < 1:
            raise ConfigError("distractor_period: must be >= 1")
        if self.distractor_mode not in ("walk", "replay"):
            raise ConfigError(f"distractor_mode: unknown value {self.distractor_mode!r}")
        if self.reward_mode not in ("sparse", "dense"):
            raise ConfigError(f"reward_mode: unknown value {self.reward_mode!r}")
        if self.obs_mode not in ("onehot", "scrambled", "image"):
            raise ConfigError(f"obs_mode: unknown value {self.obs_mode!r}")
        if self.horizon < 1:
            raise ConfigError("horizon: must be >= 1")

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def ds_card(self):
        # replay mode renders the distractor as a second agent over cells
        return self.n_cells if self.distractor_mode == "replay" else self.distractor_card


@dataclass(frozen=True)
class FactoredState:
    """Simulator ground truth; ``seed`` keys the episode's exogenous noise."""

    s_plus: int
    s_tilde_minus: int
    ds_minus: tuple
    t: int
    seed: int


def ground_truth_factors(state):
    """The three factors, unmodified.  Diagnostics only; never fed to learners."""
    return state.s_plus, state.s_tilde_minus, state.ds_minus


def _move_cell(cell, action, config):
    if config.kind == "ring":
        return (cell + _RING_MOVES[action]) % config.shape[0]
    h, w = config.shape
    r, c = divmod(cell, w)
    dr, dc = _GRID_MOVES[action]
    return min(max(r + dr, 0), h - 1) * w + min(max(c + dc, 0), w - 1)


def _cell_distance(a, b, config):
    if config.kind == "ring":
        n = config.shape[0]
        d = abs(a - b)
        return min(d, n - d)
    h, w = config.shape
    ra, ca = divmod(a, w)
    rb, cb = divmod(b, w)
    return abs(ra - rb) + abs(ca - cb)


def _max_distance(config):
    if config.kind == "ring":
        return config.shape[0] // 2
    h, w = config.shape
    return (h - 1) + (w - 1)


def _toward_goal(cell, goal, config):
    if cell == goal:
        return cell
    best, best_d = cell, _cell_distance(cell, goal, config)
    n_moves = 3 if config.kind == "ring" else 5
    for a in range(min(n_moves, len(_RING_MOVES if config.kind == "ring" else _GRID_MOVES))):
        cand = _move_cell(cell, a, config)
        d = _cell_distance(cand, goal, config)
        if d < best_d:
            best, best_d = cand, d
    return best


def _goal_step(goal, config, g):
    if g.random() >= config.goal_drift:
        return goal
    if config.kind == "ring":
        delta = 1 if g.random() < 0.5 else -1
        return (goal + delta) % config.shape[0]
    neighbor = int(g.integers(4))
    return _move_cell(goal, neighbor, config)


def _replay_cell(config, seed, dim, t):
    """Pre-recorded agent-like walk, regenerated every resample period."""
    period = config.distractor_period
    block, offset = divmod(t, period)
    g = rng.step_stream(seed, f"env.replay{dim}", block)
    cell = int(g.integers(config.n_cells))
    n_moves = min(config.action_count, 3 if config.kind == "ring" else 5)
    for _ in range(offset):
        cell = _move_cell(cell, int(g.integers(n_moves)), config)
    return cell


def _distractor_at(config, seed, t):
    if config.distractor_dims == 0:
        return ()
    if config.distractor_mode == "replay":
        return tuple(_replay_cell(config, seed, d, t) for d in range(config.distractor_dims))
    period = config.distractor_period
    base = (t // period) * period
    g0 = rng.step_stream(seed, "env.dsres", base)
    coords = g0.integers(config.distractor_card, size=config.distractor_dims)
    for u in range(base + 1, t + 1):
        g = rng.step_stream(seed, "env.ds", u)
        # lazy walk: -1/0/+1 with probs 1/4, 1/2, 1/4
        r = g.random(config.distractor_dims)
        step = np.where(r < 0.25, -1, np.where(r < 0.75, 0, 1))
        coords = (coords + step) % config.distractor_card
    return tuple(int(c) for c in coords)


_SCRAMBLE_CACHE = {}


def _scramble_matrix(config, dim):
    key = (config.seed, dim)
    if key not in _SCRAMBLE_CACHE:
        g = rng.stream(config.seed, "env.scramble")
        while True:
            m = g.normal(size=(dim, dim)) / np.sqrt(dim)
            if np.linalg.cond(m) < 1e6:
                break
        _SCRAMBLE_CACHE[key] = m
    return _SCRAMBLE_CACHE[key]


def obs_dim(config):
    if config.obs_mode == "image":
        return config.n_cells
    return 2 * config.n_cells + config.distractor_dims * config.ds_card


def render(state, config):
    """Observation vector for a state; injective in onehot mode."""
    n = config.n_cells
    if config.obs_mode == "image":
        plane = np.zeros(n)
        plane[state.s_plus] += 1.0
        plane[state.s_tilde_minus] += 0.5
        for d in state.ds_minus:
            plane[d % n] += 0.25
        return plane
    out = np.zeros(obs_dim(config))
    out[state.s_plus] = 1.0
    out[n + state.s_tilde_minus] = 1.0
    card = config.ds_card
    for i, d in enumerate(state.ds_minus):
        out[2 * n + i * card + d] = 1.0
    if config.obs_mode == "scrambled":
        out = _scramble_matrix(config, out.shape[0]) @ out
    return out


def _reward(state, config):
    if config.reward_mode == "sparse":
        return 1.0 if state.s_plus == state.s_tilde_minus else 0.0
    dist = _cell_distance(state.s_plus, state.s_tilde_minus, config)
    return -dist / _max_distance(config)


def reset(config, seed):
    """Start an episode: uniform agent cell, chains initialized, t = 0."""
    s_plus = int(rng.stream(seed, "env.splus0").integers(config.n_cells))
    goal = int(rng.stream(seed, "env.goal0").integers(config.n_cells))
    ds = _distractor_at(config, seed, 0)
    state = FactoredState(s_plus=s_plus, s_tilde_minus=goal, ds_minus=ds, t=0, seed=seed)
    return state, render(state, config)


def step(state, action, config):
    """Advance one step; returns (next_state, observation, reward).

    The agent cell responds to the action; the goal drifts and the
    distractor chain evolves from exogenous noise alone.  Reward is a
    function of (agent cell, goal cell) only.
    """
    action = int(action)
    if not (0 <= action < config.action_count):
        raise ValueError(f"action {action} outside 0..{config.action_count - 1}")
    t_next = state.t + 1
    s_plus = _move_cell(state.s_plus, action, config)
    if config.goal_coupling > 0.0:
        g = rng.step_stream(state.seed, "env.couple", state.t)
        if g.random() < config.goal_coupling:
            s_plus = _toward_goal(s_plus, state.s_tilde_minus, config)
    goal = _goal_step(state.s_tilde_minus, config, rng.step_stream(state.seed, "env.goal", state.t))
    ds = _distractor_at(config, state.seed, t_next)
    new_state = FactoredState(s_plus=s_plus, s_tilde_minus=goal, ds_minus=ds,
                              t=t_next, seed=state.seed)
    return new_state, render(new_state, config), _reward(new_state, config)


@dataclass
class Episode:
    """One rollout: obs[i] pairs with actions[i] -> rewards[i], obs[i+1]."""

    obs: np.ndarray        # (T+1, D)
    actions: np.ndarray    # (T,)
    rewards: np.ndarray    # (T,)
    splus: np.ndarray      # (T+1,)
    stilde: np.ndarray     # (T+1,)
    ds: np.ndarray         # (T+1, distractor_dims)
    seed: int

    @property
    def length(self):
        return len(self.actions)


def rollout(config, seed, policy=None):
    """Run one episode.  ``policy(obs, t, generator) -> action``; None = uniform."""
    act_stream = rng.stream(seed, "env.actions")
    state, o = reset(config, seed)
    T = config.horizon
    obs = np.zeros((T + 1, obs_dim(config)))
    actions = np.zeros(T, dtype=np.int64)
    rewards = np.zeros(T)
    splus = np.zeros(T + 1, dtype=np.int64)
    stilde = np.zeros(T + 1, dtype=np.int64)
    ds = np.zeros((T + 1, config.distractor_dims), dtype=np.int64)
    obs[0] = o
    splus[0], stilde[0], ds[0] = state.s_plus, state.s_tilde_minus, state.ds_minus
    for t in range(T):
        if policy is None:
            a = int(act_stream.integers(config.action_count))
        else:
            a = int(policy(o, t, act_stream))
        state, o, r = step(state, a, config)
        obs[t + 1] = o
        actions[t] = a
        rewards[t] = r
        splus[t + 1], stilde[t + 1] = state.s_plus, state.s_tilde_minus
        ds[t + 1] = state.ds_minus
    return Episode(obs=obs, actions=actions, rewards=rewards,
                   splus=splus, stilde=stilde, ds=ds, seed=seed)


def gt_embedding(splus, stilde, config):
    """Distractor-free geometric embedding of ground-truth factors.

    Ring cells map to unit-circle coordinates so that Euclidean distances
    respect adjacency; grids use (row, col).  Used by the behavioral
    similarity metric.
    """
    splus = np.asarray(splus)
    stilde = np.asarray(stilde)
    if config.kind == "ring":
        n = config.shape[0]
        ang_a = 2.0 * np.pi * splus / n
        ang_g = 2.0 * np.pi * stilde / n
        return np.stack([np.cos(ang_a), np.sin(ang_a),
                         np.cos(ang_g), np.sin(ang_g)], axis=-1)
    h, w = config.shape
    return np.stack([splus // w, splus % w, stilde // w, stilde % w], axis=-1).astype(np.float64)


REPLAY_FORMAT = "infoprior-replay"
REPLAY_VERSION = 1


def save_replay(path, config, episodes):
    """Newline-delimited JSON: header with config, then one record per line."""
    with open(path, "w") as f:
        header = {"format": REPLAY_FORMAT, "version": REPLAY_VERSION,
                  "config": asdict(config)}
        f.write(json.dumps(header) + "\n")
        for ep_id, ep in enumerate(episodes):
            for t in range(ep.length):
                rec = {
                    "episode": ep_id, "step": t,
                    "obs_prev": ep.obs[t].tolist(),
                    "action": int(ep.actions[t]),
                    "reward": float(ep.rewards[t]),
                    "obs": ep.obs[t + 1].tolist(),
                    "gt": {"s_plus": int(ep.splus[t + 1]),
                           "s_tilde_minus": int(ep.stilde[t + 1]),
                           "ds_minus": [int(x) for x in ep.ds[t + 1]]},
                }
                f.write(json.dumps(rec) + "\n")


def load_replay(path):
    """Read a replay file; returns (config, list of record dicts)."""
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != REPLAY_FORMAT:
            raise ValueError(f"unknown replay format {header.get('format')!r}")
        if header.get("version") != REPLAY_VERSION:
            raise ValueError(f"unsupported replay version {header.get('version')!r}")
        cfg = header["config"]
        cfg["shape"] = tuple(cfg["shape"])
        config = EnvConfig(**cfg)
        records = [json.loads(line) for line in f if line.strip()]
    return config, records


def _walk_kernel(card):
    k = np.zeros((card, card))
    for i in range(card):
        k[i, (i - 1) % card] += 0.25
        k[i, i] += 0.5
        k[i, (i + 1) % card] += 0.25
    return k


def _ds_joint_kernel(config):
    """Per-step Markov kernel of the distractor block for the tabular export.

    The scheduled full resample (every ``distractor_period`` steps) is
    treated as an equivalent per-step mixture with probability 1/period;
    rewards and the other factors are unaffected by this choice.
    """
    card, dims, period = config.distractor_card, config.distractor_dims, config.distractor_period
    if dims == 0:
        return np.ones((1, 1))
    walk = _walk_kernel(card)
    joint_walk = walk
    for _ in range(dims - 1):
        joint_walk = np.kron(joint_walk, walk)
    size = card**dims
    uniform = np.full((size, size), 1.0 / size)
    p_res = 1.0 / period
    return (1.0 - p_res) * joint_walk + p_res * uniform


def _goal_kernel(config):
    n = config.n_cells
    k = np.zeros((n, n))
    for gcell in range(n):
        k[gcell, gcell] += 1.0 - config.goal_drift
        if config.kind == "ring":
            k[gcell, (gcell + 1) % n] += config.goal_drift / 2.0
            k[gcell, (gcell - 1) % n] += config.goal_drift / 2.0
        else:
            for a in range(4):
                k[gcell, _move_cell(gcell, a, config)] += config.goal_drift / 4.0
    return k


def as_tabular(config, gamma=0.99, cap=4096):
    """Exact joint transition/reward tensors for theory checks.

    Joint state index = ((agent_cell * n_cells) + goal_cell) * ds_size + ds_index.
    Rejected when the joint space exceeds ``cap`` or the distractor is in
    replay mode (whose chain is not Markov).
    """
    if config.distractor_mode == "replay":
        raise ValueError("tabular export not defined for replay-mode distractors")
    n = config.n_cells
    ds_size = config.distractor_card**config.distractor_dims if config.distractor_dims else 1
    total = n * n * ds_size
    if total > cap:
        raise ValueError(f"joint state space {total} exceeds cap {cap}")
    A = config.action_count
    goal_k = _goal_kernel(config)
    ds_k = _ds_joint_kernel(config)

    agent_k = np.zeros((A, n, n, n))  # action, goal (for coupling), from, to
    for a in range(A):
        for gcell in range(n):
            for s in range(n):
                moved = _move_cell(s, a, config)
                if config.goal_coupling > 0.0:
                    pulled = _toward_goal(moved, gcell, config)
                    agent_k[a, gcell, s, pulled] += config.goal_coupling
                    agent_k[a, gcell, s, moved] += 1.0 - config.goal_coupling
                else:
                    agent_k[a, gcell, s, moved] = 1.0

    P = np.zeros((total, A, total))
    R = np.zeros((total, A))
    reward_of = np.zeros((n, n))
    for sp in range(n):
        for gcell in range(n):
            reward_of[sp, gcell] = _reward(
                FactoredState(sp, gcell, (), 0, 0), config)
    for sp in range(n):
        for gcell in range(n):
            for a in range(A):
                # joint over (agent', goal'): coupling uses the current goal
                block = np.einsum("t,h->th", agent_k[a, gcell, sp], goal_k[gcell])
                r = float((block * reward_of).sum())
                for d in range(ds_size):
                    idx = (sp * n + gcell) * ds_size + d
                    P[idx, a] = np.einsum("th,e->the", block, ds_k[d]).reshape(-1)
                    R[idx, a] = r
    return TabularMDP(P=P, R=R, gamma=gamma)


def tabular_index(state, config):
    ds_size = config.distractor_card**config.distractor_dims if config.distractor_dims else 1
    d = 0
    for c in state.ds_minus:
        d = d * config.distractor_card + int(c)
    return (state.s_plus * config.n_cells + state.s_tilde_minus) * ds_size + d


def action_channel(tabular, state_index):
    """The action -> successor channel of one state, for capacity solves."""
    return tabular.P[state_index]
