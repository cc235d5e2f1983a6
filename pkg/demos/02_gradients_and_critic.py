# %% [markdown]
# # Actor gradients and the regularized critic target
#
# The sampled DMAC trainer relies on two local identities. The per-sample
# actor gradient is unbiased for the per-state objective, and the critic
# target is consistent at the regularized optimum whatever next action is
# used. Both are checked numerically here.

# %%
import numpy as np

from dmac import JointPolicy, generate_random_game
from dmac.exact import SolverConfig, solve_optimal_regularized
from dmac.trainer import Transition, actor_gradient, counterfactual_baseline, critic_target

rng = np.random.default_rng(0)
game = generate_random_game(seed=3, n_states=3, n_agents=2, n_actions=3, horizon=10, gamma=0.9)
pi, rho = JointPolicy.random(game, rng, 1.5), JointPolicy.random(game, rng)
q = rng.normal(size=(game.n_states, game.n_joint_actions))
omega, s, agent = 0.5, 1, 0

# %% [markdown]
# Average the sample gradient over the joint action and compare it with
# central finite differences of sum_a pi(a) Q(s, a) - omega KL(pi_i || rho_i).

# %%
p = pi.joint_table()[s]
expected = sum(p[a] * actor_gradient(s, a, q, pi, rho, omega, agent) for a in range(game.n_joint_actions))


def objective(logits):
    trial = pi.copy()
    trial.agents[agent].logits[s] = logits
    p_i, r_i = trial.agents[agent].probs()[s], rho.agents[agent].probs()[s]
    return trial.joint_table()[s] @ q[s] - omega * p_i @ np.log(p_i / r_i)


base, h = pi.agents[agent].logits[s].copy(), 1e-6
fd = np.array([(objective(base + h * e) - objective(base - h * e)) / (2 * h) for e in np.eye(len(base))])
print("expected gradient:", expected)
print("finite difference:", fd)

# %% [markdown]
# The counterfactual baseline only depends on the other agents' actions, so
# it contributes nothing to the expected gradient.

# %%
p_i = pi.agents[agent].probs()[s]
b = counterfactual_baseline(s, (0, 2), q, pi, rho, omega, agent)
print("baseline:", b, " mean score x baseline:", sum(p_i[a] * (np.eye(3)[a] - p_i) for a in range(3)) * b)

# %% [markdown]
# At the regularized optimum Q - omega log(pi / rho) is the same for every
# action, so a sampled target with any next action matches Q* in
# expectation over the next state.

# %%
opt = solve_optimal_regularized(game, rho.joint_table(), SolverConfig(omega=omega, tol=1e-12))
a = 4
for a2 in (0, 4, 8):
    y = sum(
        game.transition[s, a, s2] * critic_target(Transition(s, a, game.reward[s, a], s2), opt.q, opt.policy, rho, omega, "sampled", gamma=game.gamma, next_action=a2)
        for s2 in range(game.n_states)
    )
    print(f"next action {a2}: target {y:.12f}   Q* {opt.q[s, a]:.12f}")
