"""Exact dynamic programming for divergence-regularized cooperative games.

Everything here works on joint tables: a policy is an (S, A) array of joint
action probabilities, Q-functions are (S, A) and V-functions are (S,). Product
policies (:class:`~dmac.policy.JointPolicy`) and lists of per-agent tables are
accepted wherever a policy is expected and are expanded to joint tables.

Regularized optima are generally *not* product policies, which is why the
solver layer does not force a per-agent factorization.

Policies coming out of repeated exponentiated updates concentrate quickly, so
the mirror iteration keeps log-probabilities to avoid underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConvergenceError, InvalidArgument
from .game import MarkovGame
from .policy import JointPolicy, log_product_table, product_table

_EPS = np.finfo(np.float64).eps

MODES = ("hard_replace", "moving_average")
_MODE_ALIASES = {"hard": "hard_replace", "hard_replace": "hard_replace", "moving": "moving_average", "moving_average": "moving_average"}


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 0.2
    tol: float = 1e-10
    max_iters: int = 1_000_000
    tie_tol: float = 1e-6

    def __post_init__(self):
        if not self.omega >= 0.0:
            raise InvalidArgument(f"omega must be >= 0, got {self.omega}")
        if not self.tol > 0.0:
            raise InvalidArgument("tol must be > 0")
        if not self.tie_tol > 0.0:
            raise InvalidArgument("tie_tol must be > 0")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")


@dataclass
class OccupancyTable:
    state_occupancy: np.ndarray
    state_action: np.ndarray


class RegularizedOptimum(NamedTuple):
    q: np.ndarray
    v: np.ndarray
    policy: np.ndarray


class BoundCheck(NamedTuple):
    gap: float
    bound: float
    holds: bool
    # the mirror run the gap was measured on
    mirror: "MirrorResult | None" = None


# -- policy coercion -------------------------------------------------------


def as_table(policy, game: MarkovGame | None = None) -> np.ndarray:
    """Joint (S, A) probability table for any supported policy representation."""
    if isinstance(policy, JointPolicy):
        if game is not None:
            policy.check_game(game)
        table = policy.joint_table()
    elif isinstance(policy, np.ndarray):
        table = np.asarray(policy, dtype=np.float64)
    else:
        table = product_table(list(policy))
    if game is not None and table.shape != (game.n_states, game.n_joint_actions):
        raise InvalidArgument(f"policy table shape {table.shape} does not match the game")
    return table


def as_log_table(policy, game: MarkovGame | None = None) -> np.ndarray:
    if isinstance(policy, JointPolicy):
        if game is not None:
            policy.check_game(game)
        return policy.log_joint_table()
    if isinstance(policy, np.ndarray):
        with np.errstate(divide="ignore"):
            out = np.log(as_table(policy, game))
        return out
    with np.errstate(divide="ignore"):
        return log_product_table([np.log(np.asarray(t, dtype=np.float64)) for t in policy])


def uniform_table(game: MarkovGame) -> np.ndarray:
    return np.full((game.n_states, game.n_joint_actions), 1.0 / game.n_joint_actions)


def _kl_from_logs(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    p = np.exp(log_p)
    with np.errstate(invalid="ignore"):
        terms = np.where(p > 0, p * (log_p - log_q), 0.0)
    return terms.sum(axis=1)


def _lse(z: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max shift."""
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def _floor(v: np.ndarray) -> float:
    # residual level below which float64 round-off dominates
    return 16.0 * _EPS * max(1.0, float(np.abs(v).max()))


def _next_value(game: MarkovGame, v: np.ndarray) -> np.ndarray:
    """E_{s'}[v(s')] for every (s, a)."""
    return game.transition @ v


def _policy_transition(game: MarkovGame, p: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", p, game.transition)


# -- evaluation ------------------------------------------------------------


def divergence_policy_evaluation(game: MarkovGame, pi, rho, cfg: SolverConfig, q0=None, history: list | None = None):
    """Iterate the regularized evaluation operator to its fixed point.

    Returns the first iterate whose sup-norm change is at most ``cfg.tol``.
    Residuals are appended to ``history`` when a list is given.
    """
    p = as_table(pi, game)
    kl = _kl_from_logs(as_log_table(pi, game), as_log_table(rho, game))
    penalty = cfg.omega * kl
    q = np.zeros((game.n_states, game.n_joint_actions)) if q0 is None else np.array(q0, dtype=np.float64)
    res = math.inf
    for it in range(1, cfg.max_iters + 1):
        v = (p * q).sum(axis=1) - penalty
        q_new = game.reward + game.gamma * _next_value(game, v)
        res = float(np.abs(q_new - q).max())
        q = q_new
        if history is not None:
            history.append(res)
        if res <= max(cfg.tol, _floor(q)):
            return q
    raise ConvergenceError(f"policy evaluation did not converge in {cfg.max_iters} iterations", residual=res, iteration=cfg.max_iters)


def v_from_q(q, pi, rho, omega) -> np.ndarray:
    """V(s) = E_pi[Q(s, .)] - omega * KL(pi(.|s) || rho(.|s))."""
    q = np.asarray(q, dtype=np.float64)
    p = as_table(pi)
    vq = (p * q).sum(axis=1)
    if omega == 0:
        return vq
    return vq - omega * _kl_from_logs(as_log_table(pi), as_log_table(rho))


def policy_values(game: MarkovGame, pi):
    """Unregularized (V, Q) of ``pi`` by a direct linear solve."""
    p = as_table(pi, game)
    r_pi = (p * game.reward).sum(axis=1)
    v = np.linalg.solve(np.eye(game.n_states) - game.gamma * _policy_transition(game, p), r_pi)
    q = game.reward + game.gamma * _next_value(game, v)
    return v, q


def regularized_policy_values(game: MarkovGame, pi, rho, omega):
    """Regularized (V, Q) of ``pi`` against target ``rho`` by a direct linear solve."""
    log_p = as_log_table(pi, game)
    return _regularized_values_logs(game, log_p, as_log_table(rho, game), omega)


def _regularized_values_logs(game, log_p, log_r, omega):
    p = np.exp(log_p)
    r_pi = (p * game.reward).sum(axis=1)
    if omega:
        r_pi = r_pi - omega * _kl_from_logs(log_p, log_r)
    v = np.linalg.solve(np.eye(game.n_states) - game.gamma * _policy_transition(game, p), r_pi)
    q = game.reward + game.gamma * _next_value(game, v)
    return v, q


def exact_return(game: MarkovGame, pi) -> float:
    """Discounted return from the initial state distribution."""
    v, _ = policy_values(game, pi)
    return float(game.initial_state_dist @ v)


def regularized_return(game: MarkovGame, pi, rho, omega) -> float:
    v, _ = regularized_policy_values(game, pi, rho, omega)
    return float(game.initial_state_dist @ v)


def occupancy(game: MarkovGame, pi) -> OccupancyTable:
    """Discounted state visitation d and state-action occupancy mu = d * pi."""
    p = as_table(pi, game)
    a = np.eye(game.n_states) - game.gamma * _policy_transition(game, p).T
    d = np.linalg.solve(a, game.initial_state_dist)
    return OccupancyTable(state_occupancy=d, state_action=d[:, None] * p)


def bregman_divergence(mu_pi: OccupancyTable, pi, rho) -> float:
    """Occupancy-weighted log ratio sum_{s,a} mu(s,a) log(pi(a|s) / rho(a|s))."""
    log_p = as_log_table(pi)
    log_r = as_log_table(rho)
    mu = mu_pi.state_action
    with np.errstate(invalid="ignore"):
        terms = np.where(mu > 0, mu * (log_p - log_r), 0.0)
    return float(terms.sum())


# -- optimality ------------------------------------------------------------


def soft_backup(game: MarkovGame, v, rho, omega) -> np.ndarray:
    """One soft optimality backup: omega * log sum_a rho * exp((r + gamma E[v]) / omega)."""
    if not omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {omega}")
    q = game.reward + game.gamma * _next_value(game, np.asarray(v, dtype=np.float64))
    return omega * _lse(as_log_table(rho, game) + q / omega)


def _soft_value_iteration(game, log_rho, omega, tol, max_iters, v0=None):
    v = np.zeros(game.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    res = math.inf
    for it in range(1, max_iters + 1):
        q = game.reward + game.gamma * _next_value(game, v)
        v_new = omega * _lse(log_rho + q / omega)
        res = float(np.abs(v_new - v).max())
        v = v_new
        if res <= max(tol, _floor(v)):
            break
    else:
        raise ConvergenceError(f"soft value iteration did not converge in {max_iters} iterations", residual=res, iteration=max_iters)
    q = game.reward + game.gamma * _next_value(game, v)
    z = log_rho + q / omega
    log_norm = _lse(z)
    return v, q, z - log_norm[:, None], log_norm, it


def _soft_policy_iteration(game, log_rho, omega, tol, max_iters, v0=None):
    # Newton-type variant: greedy soft policy, then an exact linear-solve evaluation
    v = np.zeros(game.n_states) if v0 is None else np.array(v0, dtype=np.float64)
    res = math.inf
    for it in range(1, max_iters + 1):
        q = game.reward + game.gamma * _next_value(game, v)
        z = log_rho + q / omega
        v_new, _ = _regularized_values_logs(game, z - _lse(z)[:, None], log_rho, omega)
        res, prev = float(np.abs(v_new - v).max()), res
        v = v_new
        if res <= max(tol, _floor(v)):
            break
        # Newton steps shrink superlinearly; a non-decreasing tiny residual is round-off
        if res >= prev and res <= 1e-8 * max(1.0, float(np.abs(v).max())):
            break
    else:
        raise ConvergenceError(f"soft policy iteration did not converge in {max_iters} iterations", residual=res, iteration=max_iters)
    q = game.reward + game.gamma * _next_value(game, v)
    z = log_rho + q / omega
    log_norm = _lse(z)
    return v, q, z - log_norm[:, None], log_norm, it


_INNER = {"value_iteration": _soft_value_iteration, "policy_iteration": _soft_policy_iteration}


def solve_optimal_regularized(game: MarkovGame, rho, cfg: SolverConfig, v0=None, method="value_iteration") -> RegularizedOptimum:
    """Optimal (Q, V, policy) of the game regularized toward ``rho``.

    By default soft value iteration on V until the sup-norm change is at most
    ``cfg.tol``; ``method="policy_iteration"`` alternates the soft-greedy
    policy with an exact linear-solve evaluation and reaches the same fixed
    point in a handful of steps. The policy is rho * exp(Q / omega),
    normalized per state.
    """
    if not cfg.omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {cfg.omega}")
    if method not in _INNER:
        raise InvalidArgument(f"unknown method {method!r}")
    v, q, log_pi, _, _ = _INNER[method](game, as_log_table(rho, game), cfg.omega, cfg.tol, cfg.max_iters, v0)
    return RegularizedOptimum(q=q, v=v, policy=np.exp(log_pi))


def divergence_policy_improvement(q, rho, omega) -> np.ndarray:
    """KL projection: pi_new(.|s) proportional to rho(.|s) * exp(Q(s, .) / omega)."""
    if not omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {omega}")
    z = as_log_table(rho) + np.asarray(q, dtype=np.float64) / omega
    w = np.exp(z - z.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def divergence_policy_iteration(game: MarkovGame, rho, cfg: SolverConfig, history: list | None = None):
    """Alternate regularized evaluation and improvement starting from ``rho``.

    Stops when the largest per-entry policy change drops below ``cfg.tol``.
    Returns ``(Q, policy)``; the V-function of every evaluated policy is
    appended to ``history`` when given.
    """
    if not cfg.omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {cfg.omega}")
    rho_t = as_table(rho, game)
    pi = rho_t.copy()
    q = None
    for it in range(1, cfg.max_iters + 1):
        q = divergence_policy_evaluation(game, pi, rho_t, cfg, q0=q)
        if history is not None:
            history.append(v_from_q(q, pi, rho_t, cfg.omega))
        new = divergence_policy_improvement(q, rho_t, cfg.omega)
        change = float(np.abs(new - pi).max())
        pi = new
        if change < cfg.tol:
            q = divergence_policy_evaluation(game, pi, rho_t, cfg, q0=q)
            return q, pi
    raise ConvergenceError("divergence policy iteration did not converge", residual=change, iteration=cfg.max_iters)


def lvd_policy_improvement(q_parts: Sequence[np.ndarray], k, b, rho, omega) -> list:
    """Per-agent projection for a linearly decomposed critic.

    ``q_parts[i]`` is (S, A_i), ``k[i]`` the positive per-state weights of
    agent i. ``b`` is accepted for symmetry with the critic; a state-only
    offset does not change the projection.
    """
    if not omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {omega}")
    rho_tables = rho.agent_tables() if isinstance(rho, JointPolicy) else [np.asarray(t, dtype=np.float64) for t in rho]
    if len(rho_tables) != len(q_parts):
        raise InvalidArgument("one Q-part per agent required")
    out = []
    for qi, ki, ri in zip(q_parts, k, rho_tables):
        ki = np.asarray(ki, dtype=np.float64)
        if np.any(ki <= 0):
            raise InvalidArgument("decomposition weights must be positive")
        with np.errstate(divide="ignore"):
            z = np.log(ri) + ki[:, None] * np.asarray(qi, dtype=np.float64) / omega
        out.append(np.exp(z - _lse(z)[:, None]))
    return out


def standard_value_iteration(game: MarkovGame, cfg: SolverConfig):
    """Unregularized Bellman optimality fixed point; returns ``(V, Q)``."""
    v = np.zeros(game.n_states)
    res = math.inf
    for it in range(1, cfg.max_iters + 1):
        q = game.reward + game.gamma * _next_value(game, v)
        v_new = q.max(axis=1)
        res = float(np.abs(v_new - v).max())
        v = v_new
        if res <= max(cfg.tol, _floor(v)):
            return v, game.reward + game.gamma * _next_value(game, v)
    raise ConvergenceError("value iteration did not converge", residual=res, iteration=cfg.max_iters)


def optimal_action_set(q, tie_tol: float) -> list:
    """Per state, the joint actions whose value is within tie_tol of the max."""
    q = np.asarray(q, dtype=np.float64)
    top = q.max(axis=1)
    thresh = top - tie_tol * np.maximum(1.0, np.abs(top))
    return [np.flatnonzero(row >= t) for row, t in zip(q, thresh)]


def limit_policy_prediction(pi0, q_tilde_star, tie_tol: float) -> np.ndarray:
    """Initial policy restricted to the optimal actions of Q and renormalized."""
    p0 = as_table(pi0)
    out = np.zeros_like(p0)
    for s, idx in enumerate(optimal_action_set(q_tilde_star, tie_tol)):
        w = p0[s, idx]
        out[s, idx] = w / w.sum()
    return out


def total_variation(p, q) -> np.ndarray:
    """Per-state total variation distance between two joint tables."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)


# -- mirror iteration ------------------------------------------------------


@dataclass
class MirrorIterate:
    k: int
    log_policy: np.ndarray
    log_target: np.ndarray
    exact_return: float
    regularized_return: float
    q_tilde: np.ndarray | None = None
    v_tilde: np.ndarray | None = None
    log_z: np.ndarray | None = None
    tv_change: float = math.nan

    @property
    def policy(self) -> np.ndarray:
        return np.exp(self.log_policy)

    @property
    def target(self) -> np.ndarray:
        return np.exp(self.log_target)


@dataclass
class MirrorResult:
    mode: str
    omega: float
    tau: float
    iterates: list = field(default_factory=list)
    converged: bool = False

    @property
    def final(self) -> MirrorIterate:
        return self.iterates[-1]

    @property
    def policy(self) -> np.ndarray:
        return self.final.policy

    @property
    def q_tilde(self) -> np.ndarray:
        return self.final.q_tilde

    def returns(self) -> np.ndarray:
        return np.array([it.exact_return for it in self.iterates])

    def regularized_returns(self) -> np.ndarray:
        return np.array([it.regularized_return for it in self.iterates])

    def min_return_step(self) -> float:
        """Smallest successive change of J(pi^k); >= -tol means monotone."""
        d = np.diff(self.returns())
        return float(d.min()) if d.size else 0.0

    def min_regularized_step(self) -> float:
        d = np.diff(self.regularized_returns())
        return float(d.min()) if d.size else 0.0

    def min_log_z_step(self) -> float:
        """Smallest successive change of log Z^k(s) over all states (k >= 1)."""
        zs = [it.log_z for it in self.iterates if it.log_z is not None]
        if len(zs) < 2:
            return 0.0
        return float(np.diff(np.array(zs), axis=0).min())


def mirror_iteration(
    game: MarkovGame,
    pi0,
    omega: float,
    mode: str = "hard_replace",
    k_max: int = 200,
    cfg: SolverConfig | None = None,
    tau: float = 0.1,
    policy_tol: float = 1e-9,
    patience: int = 3,
    method: str = "policy_iteration",
) -> MirrorResult:
    """Repeatedly solve the game regularized toward a moving target policy.

    ``hard_replace`` uses the previous policy as the next target.
    ``moving_average`` blends the previous target and policy in probability
    space with weight ``tau``. Stops after ``patience`` consecutive iterates
    whose per-state total-variation change is at most ``policy_tol``, or at
    ``k_max``. The inner solver (see :func:`solve_optimal_regularized`) is
    warm-started from the previous soft value.
    """
    if method not in _INNER:
        raise InvalidArgument(f"unknown method {method!r}")
    try:
        mode = _MODE_ALIASES[mode]
    except KeyError:
        raise InvalidArgument(f"unknown mode {mode!r}; expected one of {MODES}") from None
    if not omega > 0:
        raise InvalidArgument(f"omega must be > 0, got {omega}")
    if mode == "moving_average" and not 0.0 < tau <= 1.0:
        raise InvalidArgument(f"tau must lie in (0, 1], got {tau}")
    cfg = SolverConfig(omega=omega) if cfg is None else cfg
    log_pi = as_log_table(pi0, game)
    if np.any(np.isneginf(log_pi)):
        raise InvalidArgument("initial policy must have full support")

    j0 = exact_return(game, np.exp(log_pi))
    result = MirrorResult(mode=mode, omega=omega, tau=tau if mode == "moving_average" else 1.0)
    result.iterates.append(MirrorIterate(0, log_pi, log_pi, j0, j0))
    log_rho = log_pi
    if mode == "moving_average":
        log_keep, log_step = (np.log1p(-tau) if tau < 1 else -np.inf), np.log(tau)
    v = None
    quiet = 0
    for k in range(1, k_max + 1):
        if mode == "hard_replace":
            log_rho = log_pi
        else:
            log_rho = np.logaddexp(log_keep + log_rho, log_step + log_pi)
        try:
            v, q, log_new, log_norm, _ = _INNER[method](game, log_rho, omega, cfg.tol, cfg.max_iters, v)
        except ConvergenceError as exc:
            raise ConvergenceError(f"inner solver failed at mirror iterate {k}: {exc}", exc.residual, k) from None
        tv = float(total_variation(np.exp(log_new), np.exp(log_pi)).max())
        log_pi = log_new
        vr, _ = _regularized_values_logs(game, log_pi, log_rho, omega)
        result.iterates.append(
            MirrorIterate(
                k,
                log_pi,
                log_rho,
                exact_return(game, np.exp(log_pi)),
                float(game.initial_state_dist @ vr),
                q_tilde=q,
                v_tilde=v,
                log_z=log_norm,
                tv_change=tv,
            )
        )
        quiet = quiet + 1 if tv <= policy_tol else 0
        if quiet >= patience:
            result.converged = True
            break
    return result


def optimality_gap_bound_check(game: MarkovGame, omega: float, cfg: SolverConfig | None = None, k_max: int = 200) -> BoundCheck:
    """Compare the converged mirror policy with the optimal policy.

    Starts from the uniform policy; the gap is the sup-norm distance between
    the unregularized value of the final policy and the optimal value. The
    bound is omega * log|A| / (1 - gamma) with |A| the joint action count.
    """
    cfg = SolverConfig(omega=omega) if cfg is None else cfg
    res = mirror_iteration(game, uniform_table(game), omega, "hard_replace", k_max=k_max, cfg=cfg)
    v_pi, _ = policy_values(game, res.policy)
    v_star, _ = standard_value_iteration(game, cfg)
    gap = float(np.abs(v_pi - v_star).max())
    bound = omega * math.log(game.n_joint_actions) / (1.0 - game.gamma)
    return BoundCheck(gap, bound, gap <= bound + 1e-6, res)


def verify_q_equals_original(game: MarkovGame, converged, cfg: SolverConfig) -> bool:
    """Check that the limit Q of the mirror iteration is the plain Q of its policy.

    ``converged`` is a :class:`MirrorResult` or a ``(Q, policy)`` pair.
    """
    if isinstance(converged, MirrorResult):
        q_tilde, policy = converged.q_tilde, converged.policy
    else:
        q_tilde, policy = converged
    _, q_pi = policy_values(game, policy)
    return bool(np.abs(np.asarray(q_tilde) - q_pi).max() <= 10 * cfg.tol)
