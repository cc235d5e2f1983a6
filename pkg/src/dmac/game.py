"""Finite cooperative stochastic games.

A game is fully observed: every agent sees the state, all agents share one
reward, and joint actions are flattened with a mixed-radix code where agent 0
is the most significant digit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GameFileError, InvalidArgument, ValidationError

ROW_SUM_TOL = 1e-12


class JointActionIndex(NamedTuple):
    flat: int
    per_agent: tuple


def encode_joint_action(per_agent: Sequence[int], n_actions_per_agent: Sequence[int]) -> int:
    """Flatten per-agent action indices into a single joint index."""
    if len(per_agent) != len(n_actions_per_agent):
        raise InvalidArgument(
            f"expected {len(n_actions_per_agent)} agent actions, got {len(per_agent)}"
        )
    flat = 0
    for a, n in zip(per_agent, n_actions_per_agent):
        a = int(a)
        if not 0 <= a < n:
            raise InvalidArgument(f"agent action {a} out of range [0, {n})")
        flat = flat * n + a
    return flat


def decode_joint_action(flat: int, n_actions_per_agent: Sequence[int]) -> tuple:
    """Inverse of :func:`encode_joint_action`."""
    total = math.prod(n_actions_per_agent)
    flat = int(flat)
    if not 0 <= flat < total:
        raise InvalidArgument(f"joint action {flat} out of range [0, {total})")
    out = []
    for n in reversed(n_actions_per_agent):
        flat, a = divmod(flat, n)
        out.append(a)
    return tuple(reversed(out))


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """Immutable tabular cooperative Markov game.

    ``transition`` has shape (S, A, S) and ``reward`` shape (S, A) where A is
    the number of joint actions. Arrays are copied and made read-only.
    """

    n_states: int
    n_agents: int
    n_actions_per_agent: tuple
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    horizon: int
    initial_state_dist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_actions_per_agent", tuple(int(a) for a in self.n_actions_per_agent))
        for name in ("transition", "reward", "initial_state_dist"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "n_states", int(self.n_states))
        object.__setattr__(self, "n_agents", int(self.n_agents))
        object.__setattr__(self, "horizon", int(self.horizon))
        self.validate()

    @property
    def n_joint_actions(self) -> int:
        return math.prod(self.n_actions_per_agent)

    @property
    def joint_shape(self) -> tuple:
        return self.n_actions_per_agent

    def validate(self):
        S = self.n_states
        if S < 1 or self.n_agents < 1:
            raise ValidationError("game needs at least one state and one agent")
        if len(self.n_actions_per_agent) != self.n_agents:
            raise ValidationError("n_actions_per_agent length must equal n_agents")
        if any(a < 1 for a in self.n_actions_per_agent):
            raise ValidationError("every agent needs at least one action")
        A = self.n_joint_actions
        if self.transition.shape != (S, A, S):
            raise ValidationError(f"transition shape {self.transition.shape} != {(S, A, S)}")
        if self.reward.shape != (S, A):
            raise ValidationError(f"reward shape {self.reward.shape} != {(S, A)}")
        if self.initial_state_dist.shape != (S,):
            raise ValidationError(f"initial_state_dist shape {self.initial_state_dist.shape} != {(S,)}")
        if not np.all(np.isfinite(self.transition)) or np.any(self.transition < 0) or np.any(self.transition > 1):
            raise ValidationError("transition entries must lie in [0, 1]")
        row_err = np.abs(self.transition.sum(axis=2) - 1.0).max()
        if row_err > ROW_SUM_TOL:
            raise ValidationError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        if not np.all(np.isfinite(self.reward)):
            raise ValidationError("reward entries must be finite")
        d0 = self.initial_state_dist
        if np.any(d0 < 0) or not np.all(np.isfinite(d0)) or abs(d0.sum() - 1.0) > ROW_SUM_TOL:
            raise ValidationError("initial_state_dist must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")

    def encode(self, per_agent: Sequence[int]) -> int:
        return encode_joint_action(per_agent, self.n_actions_per_agent)

    def decode(self, flat: int) -> tuple:
        return decode_joint_action(flat, self.n_actions_per_agent)

    @cached_property
    def agent_action_grid(self) -> np.ndarray:
        """(A, n) array: row ``a`` holds the per-agent decoding of joint action ``a``."""
        grid = np.indices(self.n_actions_per_agent).reshape(self.n_agents, -1).T
        grid.setflags(write=False)
        return grid

    @cached_property
    def _transition_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.transition, axis=2)
        cdf[..., -1] = 1.0
        return cdf

    @cached_property
    def _initial_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.initial_state_dist)
        cdf[-1] = 1.0
        return cdf

    def sample_initial_state(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(self._initial_cdf, rng.random(), side="right"))

    def __repr__(self):
        return (
            f"MarkovGame(n_states={self.n_states}, n_agents={self.n_agents}, "
            f"n_actions_per_agent={self.n_actions_per_agent}, gamma={self.gamma}, horizon={self.horizon})"
        )


def _as_flat(game: MarkovGame, joint_action) -> int:
    if isinstance(joint_action, JointActionIndex):
        return int(joint_action.flat)
    if isinstance(joint_action, (int, np.integer)):
        a = int(joint_action)
        if not 0 <= a < game.n_joint_actions:
            raise InvalidArgument(f"joint action {a} out of range [0, {game.n_joint_actions})")
        return a
    return game.encode(joint_action)


def generate_random_game(seed, n_states, n_agents, n_actions, horizon, gamma) -> MarkovGame:
    """Draw a random cooperative game.

    Transition rows come from a flat Dirichlet, rewards are i.i.d.
    Uniform[0, 1], and the initial state is uniform. ``n_actions`` may be a
    single count shared by all agents or one count per agent.
    """
    for name, v in (("n_states", n_states), ("n_agents", n_agents), ("horizon", horizon)):
        if int(v) < 1:
            raise InvalidArgument(f"{name} must be >= 1, got {v}")
    if np.ndim(n_actions) == 0:
        actions = (int(n_actions),) * int(n_agents)
    else:
        actions = tuple(int(a) for a in n_actions)
        if len(actions) != int(n_agents):
            raise InvalidArgument("n_actions must be a count or one count per agent")
    if any(a < 1 for a in actions):
        raise InvalidArgument("n_actions must be >= 1")
    if not 0.0 <= float(gamma) < 1.0:
        raise InvalidArgument(f"gamma must lie in [0, 1), got {gamma}")

    rng = np.random.default_rng(seed)
    S, A = int(n_states), math.prod(actions)
    transition = rng.dirichlet(np.ones(S), size=(S, A))
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(S, A))
    return MarkovGame(
        n_states=S,
        n_agents=int(n_agents),
        n_actions_per_agent=actions,
        transition=transition,
        reward=reward,
        gamma=float(gamma),
        horizon=int(horizon),
        initial_state_dist=np.full(S, 1.0 / S),
    )


def step(game: MarkovGame, state, joint_action, rng: np.random.Generator):
    """Advance one step; returns ``(next_state, reward)``."""
    s = int(state)
    if not 0 <= s < game.n_states:
        raise InvalidArgument(f"state {s} out of range [0, {game.n_states})")
    a = _as_flat(game, joint_action)
    nxt = int(np.searchsorted(game._transition_cdf[s, a], rng.random(), side="right"))
    return min(nxt, game.n_states - 1), float(game.reward[s, a])


# -- serialization ---------------------------------------------------------

_GAME_KEYS = (
    "n_states",
    "n_agents",
    "n_actions_per_agent",
    "gamma",
    "horizon",
    "initial_state_dist",
    "reward",
    "transition",
)


def format_float(x: float) -> str:
    # 17 significant digits round-trip every IEEE double
    return format(float(x), ".17g")


def dump_array(arr) -> str:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 0:
        return format_float(arr)
    return "[" + ",".join(dump_array(x) for x in arr) + "]"


def game_to_json(game: MarkovGame) -> str:
    parts = [
        f'"n_states": {game.n_states}',
        f'"n_agents": {game.n_agents}',
        f'"n_actions_per_agent": {json.dumps(list(game.n_actions_per_agent))}',
        f'"gamma": {format_float(game.gamma)}',
        f'"horizon": {game.horizon}',
        f'"initial_state_dist": {dump_array(game.initial_state_dist)}',
        f'"reward": {dump_array(game.reward)}',
        f'"transition": {dump_array(game.transition)}',
    ]
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def save_game(game: MarkovGame, path) -> None:
    Path(path).write_text(game_to_json(game))


def _field_array(doc, key, shape):
    try:
        arr = np.array(doc[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GameFileError(f"field '{key}' is not a numeric array: {exc}", field=key) from None
    if arr.shape != shape:
        raise GameFileError(f"field '{key}' has shape {arr.shape}, expected {shape}", field=key)
    return arr


def _field_int(doc, key):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise GameFileError(f"field '{key}' must be an integer", field=key)
    return v


def game_from_dict(doc) -> MarkovGame:
    if not isinstance(doc, dict):
        raise GameFileError("game file must hold a JSON object")
    for key in _GAME_KEYS:
        if key not in doc:
            raise GameFileError(f"missing field '{key}'", field=key)
    S = _field_int(doc, "n_states")
    n = _field_int(doc, "n_agents")
    acts = doc["n_actions_per_agent"]
    if not isinstance(acts, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in acts):
        raise GameFileError("field 'n_actions_per_agent' must be a list of integers", field="n_actions_per_agent")
    if len(acts) != n:
        raise GameFileError("field 'n_actions_per_agent' length must equal n_agents", field="n_actions_per_agent")
    if S < 1 or any(a < 1 for a in acts):
        raise GameFileError("dimensions must be positive", field="n_states" if S < 1 else "n_actions_per_agent")
    A = math.prod(acts)
    gamma = doc["gamma"]
    if isinstance(gamma, bool) or not isinstance(gamma, (int, float)):
        raise GameFileError("field 'gamma' must be a number", field="gamma")
    return MarkovGame(
        n_states=S,
        n_agents=n,
        n_actions_per_agent=tuple(acts),
        transition=_field_array(doc, "transition", (S, A, S)),
        reward=_field_array(doc, "reward", (S, A)),
        gamma=float(gamma),
        horizon=_field_int(doc, "horizon"),
        initial_state_dist=_field_array(doc, "initial_state_dist", (S,)),
    )


def load_game(path) -> MarkovGame:
    """Read and re-validate a game file written by :func:`save_game`."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFileError(f"malformed JSON: {exc}") from None
    return game_from_dict(doc)
