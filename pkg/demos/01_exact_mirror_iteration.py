# %% [markdown]
# # Exact mirror iteration on a small cooperative game
#
# The exact layer solves a KL-regularized game again and again, each time
# using the previous solution as the new target policy. Here we watch the
# unregularized return climb, check where the policy ends up, and compare
# the final gap to the optimal value with its worst-case bound.

# %%
import numpy as np

from dmac import JointPolicy, generate_random_game
from dmac.exact import (
    SolverConfig,
    limit_policy_prediction,
    mirror_iteration,
    optimality_gap_bound_check,
    total_variation,
)

game = generate_random_game(seed=0, n_states=4, n_agents=2, n_actions=3, horizon=10, gamma=0.9)
print(game)

# %% [markdown]
# Start from a random full-support policy and iterate with omega = 0.1.
# Hard replacement sets the next target to the last policy. The moving
# average blends it in at rate tau.

# %%
pi0 = JointPolicy.random(game, np.random.default_rng(1))
cfg = SolverConfig(omega=0.1, tol=1e-12)
runs = {mode: mirror_iteration(game, pi0, 0.1, mode, k_max=2000, cfg=cfg, tau=0.1) for mode in ("hard_replace", "moving_average")}
for mode, res in runs.items():
    j = res.returns()
    print(f"{mode:15s} iterates={len(j) - 1:4d} J: {j[0]:.4f} -> {j[-1]:.4f}  smallest step {res.min_return_step():.1e}")

# %% [markdown]
# The limit keeps the initial policy's mass on the optimal joint actions and
# renormalizes it. Both modes land on that prediction.

# %%
for mode, res in runs.items():
    pred = limit_policy_prediction(pi0, res.q_tilde, 1e-6)
    print(f"{mode:15s} max per-state TV to prediction: {total_variation(res.policy, pred).max():.2e}")

# %% [markdown]
# The gap to the optimal value never exceeds omega * log|A| / (1 - gamma).

# %%
for omega in (0.01, 0.1, 1.0):
    chk = optimality_gap_bound_check(game, omega, SolverConfig(omega=omega, tol=1e-12), k_max=1000)
    print(f"omega={omega:<5g} gap={chk.gap:.3e} bound={chk.bound:.3e} holds={chk.holds}")
