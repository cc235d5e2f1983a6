"""Game builders shared by the test modules."""

import math

import numpy as np

from dmac.game import MarkovGame, generate_random_game


def one_state_game(reward, gamma=0.9, n_actions=None):
    reward = np.asarray(reward, dtype=np.float64)
    acts = (len(reward),) if n_actions is None else tuple(n_actions)
    return MarkovGame(1, len(acts), acts, np.ones((1, len(reward), 1)), reward[None, :], gamma, 10, np.ones(1))


def small_random_game(seed, max_states=10, max_agents=2, max_actions=3, gamma=0.9):
    rng = np.random.default_rng(10_000 + seed)
    S = int(rng.integers(1, max_states + 1))
    n = int(rng.integers(1, max_agents + 1))
    acts = [int(a) for a in rng.integers(2, max_actions + 1, size=n)]
    return generate_random_game(seed, S, n, acts, 10, gamma)


def tie_game(seed, n_states=4, n_agents=2, n_actions=3, gamma=0.9, gap=1.0):
    """Game whose optimal joint actions tie exactly by construction.

    Agent 0's actions 0 and 1 are exact duplicates (same reward and
    transition entries), and in every state one "effective" joint action is
    better than the rest by ``gap`` in immediate reward.
    """
    rng = np.random.default_rng(seed)
    acts = (n_actions,) * n_agents
    A = math.prod(acts)
    grid = np.indices(acts).reshape(n_agents, -1).T
    eff = grid.copy()
    eff[:, 0] = np.where(eff[:, 0] == 1, 0, eff[:, 0])
    eff_keys = [tuple(row) for row in eff]
    uniq = sorted(set(eff_keys))
    col = np.array([uniq.index(k) for k in eff_keys])
    base_p = rng.dirichlet(np.ones(n_states), size=(n_states, len(uniq)))
    base_r = rng.uniform(0.0, 0.2, size=(n_states, len(uniq)))
    best = rng.integers(len(uniq), size=n_states)
    # make the duplicated action optimal in some states
    dup_idx = [i for i, k in enumerate(uniq) if k[0] == 0]
    best[::2] = rng.choice(dup_idx, size=best[::2].shape)
    base_r[np.arange(n_states), best] += gap
    transition = base_p[:, col, :]
    transition /= transition.sum(axis=2, keepdims=True)
    return MarkovGame(n_states, n_agents, acts, transition, base_r[:, col], gamma, 10, np.full(n_states, 1.0 / n_states))


def lvd_game(seed, n_states=3, n_agents=2, n_actions=3, gamma=0.9):
    """Game whose Q-function of any policy decomposes additively across agents.

    Transitions do not depend on the action and the reward is a sum of
    per-agent terms, so Q(s, a) = sum_i r_i(s, a_i) + gamma * E[V(s')].
    """
    rng = np.random.default_rng(seed)
    acts = (n_actions,) * n_agents
    A = math.prod(acts)
    grid = np.indices(acts).reshape(n_agents, -1).T
    parts = rng.uniform(0.0, 1.0, size=(n_agents, n_states, n_actions))
    reward = sum(parts[i][:, grid[:, i]] for i in range(n_agents))
    p_s = rng.dirichlet(np.ones(n_states), size=n_states)
    transition = np.repeat(p_s[:, None, :], A, axis=1)
    game = MarkovGame(n_states, n_agents, acts, transition, reward, gamma, 10, np.full(n_states, 1.0 / n_states))
    return game, parts


def symmetric_tie_game(seed, n_states=3, n_actions=3, gamma=0.9, gap=1.0):
    """Two-agent game invariant under swapping the agents.

    Rewards and transitions of (i, j) and (j, i) are bitwise identical, and
    in every state an off-diagonal pair is best, so the optimal set holds an
    exact 2-way tie.
    """
    rng = np.random.default_rng(seed)
    m = n_actions
    r = rng.uniform(0.0, 0.2, size=(n_states, m, m))
    r = np.triu(r) + np.transpose(np.triu(r, 1), (0, 2, 1))
    for s in range(n_states):
        i, j = rng.choice(m, size=2, replace=False)
        r[s, i, j] += gap
        r[s, j, i] = r[s, i, j]
    p = rng.dirichlet(np.ones(n_states), size=(n_states, m, m))
    iu = np.triu_indices(m, 1)
    p[:, iu[1], iu[0], :] = p[:, iu[0], iu[1], :]
    return MarkovGame(n_states, 2, (m, m), p.reshape(n_states, m * m, n_states), r.reshape(n_states, m * m), gamma, 10, np.full(n_states, 1.0 / n_states))
