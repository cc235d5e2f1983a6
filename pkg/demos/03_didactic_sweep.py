# %% [markdown]
# # Omega sweep on the 30-state didactic game
#
# Sampled DMAC with tabular critics and actors, trained on a 30-state game
# with 3 agents and 5 actions each. A moderate omega explores more than a
# tiny one and ends with a higher return. A very large omega drowns the
# reward in the regularizer.
#
# The default run uses 2 seeds and 1000 episodes so it finishes in about a
# minute. Set DMAC_FULL=1 for 5 seeds and 3000 episodes.

# %%
import os

from dmac.harness import DIDACTIC_OVERRIDES, SweepSpec, didactic_game, run_sweep

full = os.environ.get("DMAC_FULL") == "1"
overrides = dict(DIDACTIC_OVERRIDES, tau=0.01)
if not full:
    overrides["episodes"] = 1000
spec = SweepSpec(
    didactic_game(),
    omegas=(0.001, 0.2, 10.0, 100.0),
    modes=("dmac", "no_reg"),
    seeds=range(5 if full else 2),
    overrides=overrides,
)
result = run_sweep(spec, jobs=1)

# %%
print(f"{'cell':20s} {'final return':>12s} {'final cover':>12s}")
for c in result.summaries:
    print(f"{c.cell:20s} {c.mean_final_exact_return:12.2f} {c.mean_final_cover_rate:12.3f}")

# %% [markdown]
# The same sweep is available from the command line:
#
#     dmac gen-game --seed 7 --states 30 --agents 3 --actions 5 --horizon 30 --gamma 0.99 -o game.json
#     dmac sweep --game game.json --preset didactic --tau 0.01 --modes dmac,no_reg --out-dir sweep_out
