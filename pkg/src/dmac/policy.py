"""Tabular softmax policies for each agent and their joint products."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import GameFileError, InvalidArgument, ValidationError
from .game import JointActionIndex, MarkovGame, decode_joint_action, dump_array


@dataclass
class AgentPolicy:
    """Softmax policy of one agent; ``logits`` has shape (n_states, n_actions)."""

    logits: np.ndarray
    agent_id: int = 0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ValidationError("logits must be a (n_states, n_actions) matrix")
        if not np.all(np.isfinite(self.logits)):
            raise ValidationError("logits must be finite")

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits, axis=1)

    def copy(self) -> "AgentPolicy":
        return AgentPolicy(self.logits.copy(), self.agent_id)


@dataclass
class JointPolicy:
    """Product of independent per-agent policies."""

    agents: list = field(default_factory=list)

    def __post_init__(self):
        if not self.agents:
            raise ValidationError("a joint policy needs at least one agent")
        if len({a.n_states for a in self.agents}) != 1:
            raise ValidationError("all agent policies must cover the same states")

    @classmethod
    def uniform(cls, game: MarkovGame) -> "JointPolicy":
        return cls([AgentPolicy(np.zeros((game.n_states, n)), i) for i, n in enumerate(game.n_actions_per_agent)])

    @classmethod
    def random(cls, game: MarkovGame, rng: np.random.Generator, scale=1.0) -> "JointPolicy":
        return cls(
            [AgentPolicy(scale * rng.standard_normal((game.n_states, n)), i) for i, n in enumerate(game.n_actions_per_agent)]
        )

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_states(self) -> int:
        return self.agents[0].n_states

    @property
    def n_actions_per_agent(self) -> tuple:
        return tuple(a.n_actions for a in self.agents)

    def agent_tables(self) -> list:
        return [a.probs() for a in self.agents]

    def joint_table(self) -> np.ndarray:
        """(n_states, n_joint_actions) probabilities; agent 0 is the slowest axis."""
        return product_table(self.agent_tables())

    def log_joint_table(self) -> np.ndarray:
        return log_product_table([a.log_probs() for a in self.agents])

    def copy(self) -> "JointPolicy":
        return JointPolicy([a.copy() for a in self.agents])

    def check_game(self, game: MarkovGame):
        if self.n_states != game.n_states or self.n_actions_per_agent != game.n_actions_per_agent:
            raise InvalidArgument("policy dimensions do not match the game")


def product_table(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Joint distribution of independent per-agent tables, flattened per state."""
    out = np.asarray(tables[0], dtype=np.float64)
    for t in tables[1:]:
        t = np.asarray(t, dtype=np.float64)
        out = (out[:, :, None] * t[:, None, :]).reshape(out.shape[0], -1)
    return out


def log_product_table(log_tables: Sequence[np.ndarray]) -> np.ndarray:
    out = np.asarray(log_tables[0], dtype=np.float64)
    for t in log_tables[1:]:
        t = np.asarray(t, dtype=np.float64)
        out = (out[:, :, None] + t[:, None, :]).reshape(out.shape[0], -1)
    return out


def _check_state(policy, state):
    s = int(state)
    if not 0 <= s < policy.n_states:
        raise InvalidArgument(f"state {s} out of range [0, {policy.n_states})")
    return s


def agent_probs(policy: AgentPolicy, state) -> np.ndarray:
    """Softmax of one logits row (max-shifted)."""
    s = _check_state(policy, state)
    row = policy.logits[s]
    e = np.exp(row - row.max())
    return e / e.sum()


def joint_prob(policy: JointPolicy, state, joint_action) -> float:
    s = _check_state(policy, state)
    if isinstance(joint_action, JointActionIndex):
        per_agent = joint_action.per_agent
    elif isinstance(joint_action, (int, np.integer)):
        per_agent = decode_joint_action(joint_action, policy.n_actions_per_agent)
    else:
        per_agent = tuple(joint_action)
    if len(per_agent) != policy.n_agents:
        raise InvalidArgument("joint action has the wrong number of agents")
    p = 1.0
    for ag, a in zip(policy.agents, per_agent):
        p *= agent_probs(ag, s)[int(a)]
    return p


def sample_joint(policy: JointPolicy, state, rng: np.random.Generator) -> JointActionIndex:
    """Independent categorical draw for each agent."""
    s = _check_state(policy, state)
    per_agent = []
    for ag in policy.agents:
        cdf = np.cumsum(agent_probs(ag, s))
        per_agent.append(min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), ag.n_actions - 1))
    flat = 0
    for a, n in zip(per_agent, policy.n_actions_per_agent):
        flat = flat * n + a
    return JointActionIndex(flat, tuple(per_agent))


def kl_divergence(p, q, axis=-1) -> np.ndarray:
    """KL(p || q) along ``axis``; terms with p == 0 contribute zero."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=axis)


def agent_kl(pi: AgentPolicy, rho: AgentPolicy, state) -> float:
    s = _check_state(pi, state)
    lp = pi.logits[s] - pi.logits[s].max()
    lp = lp - np.log(np.exp(lp).sum())
    lr = rho.logits[s] - rho.logits[s].max()
    lr = lr - np.log(np.exp(lr).sum())
    return float(np.dot(np.exp(lp), lp - lr))


def joint_kl(pi: JointPolicy, rho: JointPolicy, state) -> float:
    """KL between two product policies at ``state``: the sum of per-agent KLs."""
    if pi.n_actions_per_agent != rho.n_actions_per_agent:
        raise InvalidArgument("policies have different action spaces")
    return math.fsum(agent_kl(p, r, state) for p, r in zip(pi.agents, rho.agents))


def soft_update_params(target: JointPolicy, online: JointPolicy, tau: float) -> JointPolicy:
    """Blend logits in place: target <- (1 - tau) * target + tau * online."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgument(f"tau must lie in [0, 1], got {tau}")
    if target.n_actions_per_agent != online.n_actions_per_agent or target.n_states != online.n_states:
        raise InvalidArgument("target and online policies have different shapes")
    for t, o in zip(target.agents, online.agents):
        t.logits *= 1.0 - tau
        t.logits += tau * o.logits
    return target


def _as_distributions(policy):
    if isinstance(policy, JointPolicy):
        return policy.agent_tables()
    if isinstance(policy, np.ndarray):
        return policy
    return [np.asarray(t, dtype=np.float64) for t in policy]


def mix_probability(rho_prev, pi_prev, tau: float):
    """Convex blend ``(1 - tau) * rho_prev + tau * pi_prev`` in probability space.

    Accepts JointPolicy objects, lists of per-agent tables, or a single table
    (e.g. a joint table); the result mirrors the input structure as arrays.
    """
    if not 0.0 < tau <= 1.0:
        raise InvalidArgument(f"tau must lie in (0, 1], got {tau}")
    rho_d = _as_distributions(rho_prev)
    pi_d = _as_distributions(pi_prev)
    if isinstance(rho_d, np.ndarray) != isinstance(pi_d, np.ndarray):
        raise InvalidArgument("both arguments must have the same structure")
    if isinstance(rho_d, np.ndarray):
        if rho_d.shape != pi_d.shape:
            raise InvalidArgument("shape mismatch")
        return (1.0 - tau) * rho_d + tau * pi_d
    if len(rho_d) != len(pi_d):
        raise InvalidArgument("agent count mismatch")
    out = []
    for r, p in zip(rho_d, pi_d):
        if r.shape != p.shape:
            raise InvalidArgument("shape mismatch")
        out.append((1.0 - tau) * r + tau * p)
    return out


# -- snapshots -------------------------------------------------------------


def policy_to_json(policy: JointPolicy) -> str:
    agents = ",\n    ".join(
        f'{{"agent_id": {a.agent_id}, "logits": {dump_array(a.logits)}}}' for a in policy.agents
    )
    return (
        "{\n"
        f'  "n_states": {policy.n_states},\n'
        f'  "n_actions_per_agent": {json.dumps(list(policy.n_actions_per_agent))},\n'
        f'  "agents": [\n    {agents}\n  ]\n'
        "}\n"
    )


def save_policy(policy: JointPolicy, path) -> None:
    Path(path).write_text(policy_to_json(policy))


def load_policy(path, game: MarkovGame | None = None) -> JointPolicy:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GameFileError(f"malformed JSON: {exc}") from None
    for key in ("n_states", "n_actions_per_agent", "agents"):
        if key not in doc:
            raise GameFileError(f"missing field '{key}'", field=key)
    S, acts = doc["n_states"], tuple(doc["n_actions_per_agent"])
    if len(doc["agents"]) != len(acts):
        raise GameFileError("agent count does not match n_actions_per_agent", field="agents")
    agents = []
    for i, (entry, n) in enumerate(zip(doc["agents"], acts)):
        logits = np.array(entry.get("logits"), dtype=np.float64)
        if logits.shape != (S, n):
            raise GameFileError(f"agent {i} logits have shape {logits.shape}, expected {(S, n)}", field="agents")
        agents.append(AgentPolicy(logits, int(entry.get("agent_id", i))))
    policy = JointPolicy(agents)
    if game is not None:
        policy.check_game(game)
    return policy
