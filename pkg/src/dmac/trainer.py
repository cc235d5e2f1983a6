"""Sampled off-policy DMAC training with tabular softmax agents.

The critic is either a joint Q-table or a linearly decomposed critic
Q(s, a) = sum_i k_i(s) Q_i(s, a_i) + b(s). Actors follow the counterfactual
policy gradient with a divergence penalty toward a slowly moving target
policy, whose logits track the actors by soft updates.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .errors import InvalidArgument
from .exact import as_log_table, as_table, exact_return
from .game import JointActionIndex, MarkovGame, step
from .policy import JointPolicy, soft_update_params

CRITIC_KINDS = ("joint", "lvd")
NEXT_ACTION_MODES = ("expected", "sampled")
ACTOR_MODES = ("expected", "sampled")
ACTOR_OPTIMIZERS = ("rmsprop", "sgd")
TARGET_MODES = ("moving", "uniform")


@dataclass(frozen=True)
class TrainerConfig:
    omega: float = 0.2
    tau: float = 0.01
    critic_lr: float = 1e-3
    actor_lr: float = 1e-4
    batch_size: int = 32
    buffer_capacity: int = 100_000
    episodes: int = 1000
    eval_every: int = 10
    eval_episodes: int = 5
    seed: int = 0
    critic_kind: str = "joint"
    next_action_mode: str = "expected"
    # "expected": exact expectation over a ~ pi at the sampled buffer states
    actor_mode: str = "expected"
    # "uniform" freezes the target at the uniform policy (entropy ablation)
    target_mode: str = "moving"
    actor_optimizer: str = "rmsprop"
    rms_decay: float = 0.99
    rms_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise InvalidArgument(f"omega must be finite and >= 0, got {self.omega}")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidArgument(f"tau must lie in (0, 1], got {self.tau}")
        if not (self.critic_lr > 0 and self.actor_lr > 0):
            raise InvalidArgument("learning rates must be > 0")
        if not (0.0 <= self.rms_decay < 1.0 and self.rms_eps > 0):
            raise InvalidArgument("rms_decay must lie in [0, 1) and rms_eps must be > 0")
        for name in ("batch_size", "buffer_capacity", "episodes", "eval_every", "eval_episodes"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        for name, allowed in (
            ("critic_kind", CRITIC_KINDS),
            ("next_action_mode", NEXT_ACTION_MODES),
            ("actor_mode", ACTOR_MODES),
            ("target_mode", TARGET_MODES),
            ("actor_optimizer", ACTOR_OPTIMIZERS),
        ):
            if getattr(self, name) not in allowed:
                raise InvalidArgument(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainerConfig":
        """Build a config from loosely typed values (e.g. strings from a file)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise InvalidArgument(f"unknown trainer option {key!r}")
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(value)
            except (TypeError, ValueError):
                raise InvalidArgument(f"bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Transition(NamedTuple):
    state: int
    joint_action: JointActionIndex
    reward: float
    next_state: int


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgument("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros(self.capacity, dtype=np.int64)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros(self.capacity, dtype=np.int64)
        self.insertions = 0

    def __len__(self):
        return min(self.insertions, self.capacity)

    def add(self, state, joint_action, reward, next_state):
        i = self.insertions % self.capacity
        self.states[i] = state
        self.actions[i] = joint_action.flat if isinstance(joint_action, JointActionIndex) else joint_action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.insertions += 1

    def push(self, t: Transition):
        self.add(t.state, t.joint_action, t.reward, t.next_state)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Arrays ``(states, actions, rewards, next_states)`` of a uniform draw."""
        if len(self) == 0:
            raise InvalidArgument("cannot sample from an empty buffer")
        idx = rng.integers(len(self), size=batch_size)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


@dataclass
class JointCritic:
    q: np.ndarray
    q_target: np.ndarray

    @classmethod
    def zeros(cls, game: MarkovGame) -> "JointCritic":
        shape = (game.n_states, game.n_joint_actions)
        return cls(np.zeros(shape), np.zeros(shape))

    def table(self) -> np.ndarray:
        return self.q

    def target_table(self) -> np.ndarray:
        return self.q_target

    def soft_update_target(self, tau: float):
        self.q_target *= 1.0 - tau
        self.q_target += tau * self.q


@dataclass
class DecomposedCritic:
    """Q(s, a) = sum_i k_i(s) q_i(s, a_i) + b(s) with k_i = exp(raw_k_i) > 0."""

    q_parts: list
    raw_k: np.ndarray
    b: np.ndarray
    grid: np.ndarray
    target_q_parts: list = field(default_factory=list)
    target_raw_k: np.ndarray | None = None
    target_b: np.ndarray | None = None

    def __post_init__(self):
        if not self.target_q_parts:
            self.target_q_parts = [q.copy() for q in self.q_parts]
        if self.target_raw_k is None:
            self.target_raw_k = self.raw_k.copy()
        if self.target_b is None:
            self.target_b = self.b.copy()

    @classmethod
    def zeros(cls, game: MarkovGame) -> "DecomposedCritic":
        S = game.n_states
        return cls(
            [np.zeros((S, n)) for n in game.n_actions_per_agent],
            np.zeros((game.n_agents, S)),
            np.zeros(S),
            np.asarray(game.agent_action_grid),
        )

    @property
    def k(self) -> np.ndarray:
        return np.exp(self.raw_k)

    @staticmethod
    def _combine(parts, raw_k, b, grid):
        k = np.exp(raw_k)
        out = np.repeat(b[:, None], grid.shape[0], axis=1)
        for i, qi in enumerate(parts):
            out = out + k[i][:, None] * qi[:, grid[:, i]]
        return out

    def table(self) -> np.ndarray:
        return self._combine(self.q_parts, self.raw_k, self.b, self.grid)

    def target_table(self) -> np.ndarray:
        return self._combine(self.target_q_parts, self.target_raw_k, self.target_b, self.grid)

    def soft_update_target(self, tau: float):
        for t, q in zip(self.target_q_parts, self.q_parts):
            t *= 1.0 - tau
            t += tau * q
        self.target_raw_k *= 1.0 - tau
        self.target_raw_k += tau * self.raw_k
        self.target_b *= 1.0 - tau
        self.target_b += tau * self.b


# -- critic ----------------------------------------------------------------


def _q_table(q, target=False) -> np.ndarray:
    if isinstance(q, (JointCritic, DecomposedCritic)):
        return q.target_table() if target else q.table()
    return np.asarray(q, dtype=np.float64)


def soft_state_values(q_table, pi, rho, omega) -> np.ndarray:
    """W(s) = sum_a pi(a|s) (Q(s, a) - omega log(pi(a|s) / rho(a|s)))."""
    log_p = as_log_table(pi)
    p = np.exp(log_p)
    w = (p * q_table).sum(axis=1)
    if omega:
        with np.errstate(invalid="ignore"):
            w = w - omega * np.where(p > 0, p * (log_p - as_log_table(rho)), 0.0).sum(axis=1)
    return w


def critic_target(transition: Transition, q_target, pi, rho, omega, mode="expected", *, gamma, rng=None, next_action=None) -> float:
    """Regularized TD target for one transition.

    ``expected`` sums over a' ~ pi(.|s'); ``sampled`` uses ``next_action``
    when given, else draws a' ~ pi(.|s') from ``rng``.
    """
    q_tab = _q_table(q_target, target=isinstance(q_target, (JointCritic, DecomposedCritic)))
    s2 = int(transition.next_state)
    if mode == "expected":
        return float(transition.reward + gamma * soft_state_values(q_tab[s2 : s2 + 1], _row(pi, s2), _row(rho, s2), omega)[0])
    if mode != "sampled":
        raise InvalidArgument(f"unknown next-action mode {mode!r}")
    log_p = as_log_table(_row(pi, s2))[0]
    log_r = as_log_table(_row(rho, s2))[0]
    if next_action is None:
        if rng is None:
            raise InvalidArgument("sampled mode needs an rng or an explicit next action")
        cdf = np.cumsum(np.exp(log_p))
        a2 = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(cdf) - 1)
    else:
        a2 = int(next_action.flat if isinstance(next_action, JointActionIndex) else next_action)
    return float(transition.reward + gamma * (q_tab[s2, a2] - omega * (log_p[a2] - log_r[a2])))


def _row(policy, s):
    # one-state slice of any policy representation, as a joint table
    if isinstance(policy, JointPolicy):
        return JointPolicy([type(a)(a.logits[s : s + 1], a.agent_id) for a in policy.agents])
    return as_table(policy)[s : s + 1]


def _batch_arrays(batch):
    if isinstance(batch, tuple) and len(batch) == 4 and isinstance(batch[0], np.ndarray):
        return batch
    s = np.array([t.state for t in batch], dtype=np.int64)
    a = np.array([t.joint_action.flat if isinstance(t.joint_action, JointActionIndex) else t.joint_action for t in batch], dtype=np.int64)
    r = np.array([t.reward for t in batch], dtype=np.float64)
    s2 = np.array([t.next_state for t in batch], dtype=np.int64)
    return s, a, r, s2


def batch_targets(batch, critic, pi, rho, omega, gamma, mode="expected", rng=None) -> np.ndarray:
    s, a, r, s2 = _batch_arrays(batch)
    q_tab = _q_table(critic, target=isinstance(critic, (JointCritic, DecomposedCritic)))
    if mode == "expected":
        return r + gamma * soft_state_values(q_tab, pi, rho, omega)[s2]
    if mode != "sampled":
        raise InvalidArgument(f"unknown next-action mode {mode!r}")
    if rng is None:
        raise InvalidArgument("sampled mode needs an rng")
    log_p = as_log_table(pi)
    log_r = as_log_table(rho)
    cdf = np.cumsum(np.exp(log_p[s2]), axis=1)
    u = rng.random(len(s2)) * cdf[:, -1]
    a2 = np.minimum((cdf <= u[:, None]).sum(axis=1), cdf.shape[1] - 1)
    return r + gamma * (q_tab[s2, a2] - omega * (log_p[s2, a2] - log_r[s2, a2]))


def critic_update(critic, batch, pi, rho, cfg: TrainerConfig, gamma: float, rng=None):
    """One pass of tabular squared-loss gradient steps over ``batch``.

    Targets come from the target critic and are fixed before the pass; the
    per-element steps are applied in batch order.
    """
    s, a, _, _ = _batch_arrays(batch)
    y = batch_targets(batch, critic, pi, rho, cfg.omega, gamma, cfg.next_action_mode, rng)
    lr = cfg.critic_lr
    if isinstance(critic, JointCritic):
        q = critic.q
        for si, ai, yi in zip(s.tolist(), a.tolist(), y.tolist()):
            q[si, ai] += lr * (yi - q[si, ai])
        return critic
    if not isinstance(critic, DecomposedCritic):
        raise InvalidArgument("critic must be a JointCritic or DecomposedCritic")
    grid = critic.grid
    n = len(critic.q_parts)
    for si, ai, yi in zip(s.tolist(), a.tolist(), y.tolist()):
        acts = grid[ai]
        k = np.exp(critic.raw_k[:, si])
        qs = np.array([critic.q_parts[i][si, acts[i]] for i in range(n)])
        delta = yi - (float(k @ qs) + critic.b[si])
        for i in range(n):
            critic.q_parts[i][si, acts[i]] += lr * delta * k[i]
        critic.raw_k[:, si] += lr * delta * k * qs
        critic.b[si] += lr * delta
    return critic


# -- actors ----------------------------------------------------------------


def _per_agent(pi: JointPolicy, agent: int, state: int):
    if not isinstance(pi, JointPolicy):
        raise InvalidArgument("actor gradients need per-agent policies (JointPolicy)")
    if not 0 <= agent < pi.n_agents:
        raise InvalidArgument(f"agent {agent} out of range")
    logits = pi.agents[agent].logits[state]
    z = logits - logits.max()
    log_p = z - np.log(np.exp(z).sum())
    return np.exp(log_p), log_p


def _actions_tuple(joint_action, pi: JointPolicy) -> tuple:
    if isinstance(joint_action, JointActionIndex):
        return tuple(joint_action.per_agent)
    if isinstance(joint_action, (int, np.integer)):
        from .game import decode_joint_action

        return decode_joint_action(joint_action, pi.n_actions_per_agent)
    return tuple(int(x) for x in joint_action)


def _agent_slice(q_row: np.ndarray, acts: tuple, agent: int, shape: tuple) -> np.ndarray:
    """Q(s, a_i, a_{-i}) over agent i's actions with the others fixed."""
    idx = list(acts)
    idx[agent] = slice(None)
    return q_row.reshape(shape)[tuple(idx)]


def counterfactual_baseline(state, others_actions, critic, pi: JointPolicy, rho: JointPolicy, omega, agent) -> float:
    """b(s, a_-i) = E_{a_i ~ pi_i}[Q(s, a) - omega log(pi(a|s) / rho(a|s)) - omega].

    ``others_actions`` is a full per-agent action tuple (entry ``agent`` is
    ignored) or the n - 1 actions of the other agents.
    """
    s = int(state)
    acts = list(_actions_tuple(others_actions, pi))
    if len(acts) == pi.n_agents - 1:
        acts.insert(agent, 0)
    if len(acts) != pi.n_agents:
        raise InvalidArgument("wrong number of agent actions")
    p_i, log_p_i = _per_agent(pi, agent, s)
    _, log_r_i = _per_agent(rho, agent, s)
    q_i = _agent_slice(_q_table(critic)[s], tuple(acts), agent, pi.n_actions_per_agent)
    others = 0.0
    for j in range(pi.n_agents):
        if j != agent:
            _, lp = _per_agent(pi, j, s)
            _, lr = _per_agent(rho, j, s)
            others += lp[acts[j]] - lr[acts[j]]
    kl_i = float(p_i @ (log_p_i - log_r_i))
    return float(p_i @ q_i - omega * (others + kl_i) - omega)


def actor_gradient(state, joint_action, critic, pi: JointPolicy, rho: JointPolicy, omega, agent) -> np.ndarray:
    """Per-sample gradient over agent ``agent``'s logits at ``state``.

    Score function of a_i times Q(s, a) - omega log(pi_i / rho_i)
    - E_{a_i}[Q(s, a_i, a_-i)] + omega KL(pi_i || rho_i). Returns a vector of
    length A_i (the gradient is zero for every other state row).
    """
    s = int(state)
    acts = _actions_tuple(joint_action, pi)
    p_i, log_p_i = _per_agent(pi, agent, s)
    _, log_r_i = _per_agent(rho, agent, s)
    q_i = _agent_slice(_q_table(critic)[s], acts, agent, pi.n_actions_per_agent)
    ai = acts[agent]
    log_ratio = log_p_i - log_r_i
    coef = q_i[ai] - omega * log_ratio[ai] - p_i @ q_i + omega * (p_i @ log_ratio)
    score = -p_i
    score[ai] += 1.0
    return coef * score


def actor_gradient_lvd(state, agent_action, critic: DecomposedCritic, pi: JointPolicy, rho: JointPolicy, omega, agent) -> np.ndarray:
    """Per-sample gradient for a decomposed critic.

    Score of a_i times k_i(s) A_i(s, a_i) - omega log(pi_i / rho_i)
    + omega KL(pi_i || rho_i), with A_i the centred per-agent utility.
    """
    s, ai = int(state), int(agent_action)
    p_i, log_p_i = _per_agent(pi, agent, s)
    _, log_r_i = _per_agent(rho, agent, s)
    q = critic.q_parts[agent][s]
    k = math.exp(critic.raw_k[agent, s])
    log_ratio = log_p_i - log_r_i
    coef = k * (q[ai] - p_i @ q) - omega * log_ratio[ai] + omega * (p_i @ log_ratio)
    score = -p_i
    score[ai] += 1.0
    return coef * score


def lvd_advantage(critic: DecomposedCritic, pi: JointPolicy, agent, state) -> np.ndarray:
    p_i, _ = _per_agent(pi, agent, int(state))
    q = critic.q_parts[agent][int(state)]
    return q - p_i @ q


def expected_actor_gradients(q_table, pi: JointPolicy, rho: JointPolicy, omega) -> list:
    """Exact expectation of :func:`actor_gradient` over a ~ pi, for every state.

    Returns one (S, A_i) array per agent. With c(a_i) = Qbar_i(s, a_i)
    - omega log(pi_i / rho_i), where Qbar_i marginalizes the other agents,
    the expectation is pi_i * (c - E_{pi_i} c).
    """
    q = np.asarray(q_table, dtype=np.float64)
    shape = pi.n_actions_per_agent
    tables = pi.agent_tables()
    q_nd = q.reshape((q.shape[0],) + shape)
    letters = "abcdefghijklmnopqr"[: len(shape)]
    out = []
    for i, rho_i in enumerate(rho.agents):
        others = [j for j in range(len(shape)) if j != i]
        expr = f"s{letters}," + "".join(f"s{letters[j]}," for j in others)[:-1] + f"->s{letters[i]}"
        q_bar = np.einsum(expr.replace(",->", "->"), q_nd, *[tables[j] for j in others])
        c = q_bar - omega * (pi.agents[i].log_probs() - rho_i.log_probs())
        p = tables[i]
        out.append(p * (c - (p * c).sum(axis=1, keepdims=True)))
    return out


def expected_actor_gradient(state, critic, pi: JointPolicy, rho: JointPolicy, omega, agent) -> np.ndarray:
    s = int(state)
    row = _row(pi, s), _row(rho, s)
    return expected_actor_gradients(_q_table(critic)[s : s + 1], row[0], row[1], omega)[agent][0]


def cover_rate(visited, game: MarkovGame) -> float:
    """Fraction of (state, joint action) pairs visited."""
    total = game.n_states * game.n_joint_actions
    if isinstance(visited, np.ndarray):
        return float(np.count_nonzero(visited)) / total
    return len(set(visited)) / total


# -- training loop ---------------------------------------------------------

CSV_COLUMNS = ("step", "episode", "mean_episode_reward", "exact_return", "cover_rate", "omega", "seed")


class MetricRow(NamedTuple):
    step: int
    episode: int
    mean_episode_reward: float
    exact_return: float
    cover_rate: float
    omega: float
    seed: int


@dataclass
class RunMetrics:
    rows: list
    config: dict
    config_hash: str
    version: str = f"dmac {__version__}"
    policy: JointPolicy | None = None
    extra: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def tail(self, name, frac=0.1) -> np.ndarray:
        """Last ``frac`` of the evaluation points (at least one)."""
        n = max(1, math.ceil(frac * len(self.rows)))
        return self.column(name)[-n:]

    def final(self, name, frac=0.1) -> float:
        return math.fsum(self.tail(name, frac)) / len(self.tail(name, frac))

    def summary(self) -> dict:
        return {
            "final_mean_episode_reward": self.final("mean_episode_reward"),
            "final_exact_return": self.final("exact_return"),
            "final_cover_rate": self.final("cover_rate"),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.version} config_hash={self.config_hash}\n")
        buf.write(f"# config={json.dumps(self.config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.step, r.episode, repr(r.mean_episode_reward), repr(r.exact_return), repr(r.cover_rate), repr(r.omega), r.seed])
        return buf.getvalue()

    def save_csv(self, path):
        Path(path).write_text(self.to_csv())


def read_metrics_csv(path) -> list:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(
            MetricRow(
                int(rec["step"]),
                int(rec["episode"]),
                float(rec["mean_episode_reward"]),
                float(rec["exact_return"]),
                float(rec["cover_rate"]),
                float(rec["omega"]),
                int(rec["seed"]),
            )
        )
    return out


def _sample_actions(cdfs: Sequence[np.ndarray], s: int, rng: np.random.Generator, shape) -> int:
    u = rng.random(len(cdfs))
    flat = 0
    for cdf, ui, n in zip(cdfs, u, shape):
        a = int(np.searchsorted(cdf[s], ui * cdf[s, -1], side="right"))
        flat = flat * n + min(a, n - 1)
    return flat


def _rollout(game, cdfs, rng, on_step=None) -> float:
    s = game.sample_initial_state(rng)
    total = 0.0
    for _ in range(game.horizon):
        a = _sample_actions(cdfs, s, rng, game.n_actions_per_agent)
        s2, r = step(game, s, a, rng)
        if on_step is not None:
            on_step(s, a, r, s2)
        total += r
        s = s2
    return total


def _cdfs(pi: JointPolicy):
    return [np.cumsum(t, axis=1) for t in pi.agent_tables()]


def train(game: MarkovGame, cfg: TrainerConfig) -> RunMetrics:
    """Run sampled DMAC on ``game`` and log evaluation metrics.

    Evaluation happens before training, every ``eval_every`` episodes and
    after the last episode. Evaluation rollouts use their own random stream
    and do not count toward the cover rate.
    """
    cfg.validate()
    train_rng, eval_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    pi = JointPolicy.uniform(game)
    rho = JointPolicy.uniform(game)
    critic = JointCritic.zeros(game) if cfg.critic_kind == "joint" else DecomposedCritic.zeros(game)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    visited = np.zeros((game.n_states, game.n_joint_actions), dtype=bool)
    rows = []
    steps = 0

    def evaluate(episode):
        cdfs = _cdfs(pi)
        rewards = [_rollout(game, cdfs, eval_rng) for _ in range(cfg.eval_episodes)]
        rows.append(
            MetricRow(
                steps,
                episode,
                math.fsum(rewards) / len(rewards),
                exact_return(game, pi.joint_table()),
                cover_rate(visited, game),
                float(cfg.omega),
                int(cfg.seed),
            )
        )

    def record(s, a, r, s2):
        buffer.add(s, a, r, s2)
        visited[s, a] = True

    sq_avg = [np.zeros_like(a.logits) for a in pi.agents]
    evaluate(0)
    for ep in range(1, cfg.episodes + 1):
        _rollout(game, _cdfs(pi), train_rng, record)
        steps += game.horizon
        batch = buffer.sample(cfg.batch_size, train_rng)
        _actor_step(critic, pi, rho, batch, cfg, train_rng, sq_avg)
        if cfg.target_mode == "moving":
            soft_update_params(rho, pi, cfg.tau)
        critic_update(critic, batch, pi, rho, cfg, game.gamma, train_rng)
        critic.soft_update_target(cfg.tau)
        if ep % cfg.eval_every == 0 or ep == cfg.episodes:
            evaluate(ep)
    cfg_dict = cfg.to_dict()
    return RunMetrics(rows, cfg_dict, cfg.config_hash(), policy=pi, extra={"visited": int(visited.sum())})


def _actor_step(critic, pi: JointPolicy, rho: JointPolicy, batch, cfg: TrainerConfig, rng, sq_avg):
    s = batch[0]
    S = pi.n_states
    q = _q_table(critic)
    if cfg.actor_mode == "expected":
        weight = np.bincount(s, minlength=S) / len(s)
        grads = [weight[:, None] * g for g in expected_actor_gradients(q, pi, rho, cfg.omega)]
    else:
        grads = [np.zeros_like(a.logits) for a in pi.agents]
        cdfs = _cdfs(pi)
        for si in s.tolist():
            a = _sample_actions(cdfs, si, rng, pi.n_actions_per_agent)
            for i in range(pi.n_agents):
                grads[i][si] += actor_gradient(si, a, q, pi, rho, cfg.omega, i) / len(s)
    # simultaneous update of all agents
    for agent, g, sq in zip(pi.agents, grads, sq_avg):
        if cfg.actor_optimizer == "sgd":
            agent.logits += cfg.actor_lr * g
        else:
            sq *= cfg.rms_decay
            sq += (1.0 - cfg.rms_decay) * g * g
            agent.logits += cfg.actor_lr * g / (np.sqrt(sq) + cfg.rms_eps)
