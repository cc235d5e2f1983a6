"""Experiment orchestration: seeded sweeps, exact-layer reports and cross-checks."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidArgument
from .exact import (
    SolverConfig,
    exact_return,
    limit_policy_prediction,
    mirror_iteration,
    policy_values,
    standard_value_iteration,
    total_variation,
    uniform_table,
)
from .game import MarkovGame, generate_random_game, load_game
from .trainer import RunMetrics, TrainerConfig, train

DEFAULT_OMEGAS = (0.001, 0.01, 0.1, 0.2, 1.0, 10.0, 100.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SWEEP_MODES = ("dmac", "no_reg", "entropy")
FINAL_FRACTION = 0.1

# Step sizes for tabular agents on the 30-state didactic game. The default
# network-scale learning rates (critic 1e-3, actor 1e-4) barely move a table in a
# few thousand episodes.
DIDACTIC_OVERRIDES = {
    "episodes": 3000,
    "actor_lr": 0.03,
    "critic_lr": 0.5,
    "batch_size": 128,
    "eval_every": 100,
    "eval_episodes": 2,
}

DIDACTIC_GAME = {"seed": 7, "n_states": 30, "n_agents": 3, "n_actions": 5, "horizon": 30, "gamma": 0.99}


def didactic_game(seed: int = DIDACTIC_GAME["seed"]) -> MarkovGame:
    """The 30-state, 3-agent, 5-action random game used for the didactic sweep."""
    p = dict(DIDACTIC_GAME, seed=seed)
    return generate_random_game(p["seed"], p["n_states"], p["n_agents"], p["n_actions"], p["horizon"], p["gamma"])


@dataclass
class SweepSpec:
    """What to run: a game, an omega grid, ablation modes and seeds.

    ``game`` may be a :class:`MarkovGame`, a path to a game file, or a dict of
    :func:`generate_random_game` arguments.
    """

    game: object = field(default_factory=lambda: dict(DIDACTIC_GAME))
    omegas: tuple = DEFAULT_OMEGAS
    modes: tuple = ("dmac",)
    seeds: tuple = DEFAULT_SEEDS
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omegas = tuple(float(w) for w in self.omegas)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.modes = tuple(self.modes)
        if not self.omegas:
            raise InvalidArgument("omega list must not be empty")
        if not self.seeds:
            raise InvalidArgument("seed list must not be empty")
        for m in self.modes:
            if m not in SWEEP_MODES:
                raise InvalidArgument(f"unknown sweep mode {m!r}; expected one of {SWEEP_MODES}")
        if any(w < 0 for w in self.omegas):
            raise InvalidArgument("omega values must be >= 0")
        # fail fast on bad overrides
        TrainerConfig.from_dict(self.overrides)

    def resolve_game(self) -> MarkovGame:
        if isinstance(self.game, MarkovGame):
            return self.game
        if isinstance(self.game, dict):
            g = self.game
            return generate_random_game(g["seed"], g["n_states"], g["n_agents"], g["n_actions"], g["horizon"], g["gamma"])
        return load_game(self.game)

    def cells(self) -> list:
        """``(cell_name, mode, omega)`` for every cell, in a fixed order."""
        out = []
        for mode in self.modes:
            if mode == "no_reg":
                out.append(("no_reg", mode, 0.0))
                continue
            for w in self.omegas:
                out.append((f"{mode}_omega_{w:g}", mode, w))
        return out

    def config_for(self, mode: str, omega: float, seed: int) -> TrainerConfig:
        base = TrainerConfig.from_dict(self.overrides).to_dict()
        base.update(omega=omega, seed=seed, target_mode="uniform" if mode == "entropy" else "moving")
        return TrainerConfig(**base)

    def to_dict(self) -> dict:
        game = self.game if isinstance(self.game, dict) else str(self.game) if not isinstance(self.game, MarkovGame) else repr(self.game)
        return {"game": game, "omegas": list(self.omegas), "modes": list(self.modes), "seeds": list(self.seeds), "overrides": dict(self.overrides)}


@dataclass
class CellSummary:
    cell: str
    mode: str
    omega: float
    final_reward: dict
    final_exact_return: dict
    final_cover_rate: dict
    errors: dict

    @staticmethod
    def _mean(values: dict) -> float:
        if not values:
            return math.nan
        return math.fsum(values[k] for k in sorted(values)) / len(values)

    @property
    def mean_final_reward(self) -> float:
        return self._mean(self.final_reward)

    @property
    def mean_final_exact_return(self) -> float:
        return self._mean(self.final_exact_return)

    @property
    def mean_final_cover_rate(self) -> float:
        return self._mean(self.final_cover_rate)


@dataclass
class SweepResult:
    spec: SweepSpec
    runs: dict
    summaries: list

    def cell(self, name: str) -> CellSummary:
        for c in self.summaries:
            if c.cell == name:
                return c
        raise KeyError(name)

    def aggregate_csv(self) -> str:
        return aggregate_csv(self.summaries, self.spec)


def _run_one(args):
    game, cfg = args
    try:
        return train(game, cfg), None
    except Exception as exc:  # recorded, the sweep continues
        return None, f"{type(exc).__name__}: {exc}"


def summarize(cell, mode, omega, runs: dict) -> CellSummary:
    rew, ret, cov, err = {}, {}, {}, {}
    for seed in sorted(runs):
        metrics, error = runs[seed]
        if metrics is None:
            err[seed] = error
            continue
        rew[seed] = metrics.final("mean_episode_reward", FINAL_FRACTION)
        ret[seed] = metrics.final("exact_return", FINAL_FRACTION)
        cov[seed] = metrics.final("cover_rate", FINAL_FRACTION)
    return CellSummary(cell, mode, omega, rew, ret, cov, err)


def _per_seed(values: dict) -> str:
    return ";".join(f"{k}:{values[k]!r}" for k in sorted(values))


def aggregate_csv(summaries, spec: SweepSpec | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# dmac {__version__}; final = mean of the last {FINAL_FRACTION:g} fraction of evaluation points\n")
    if spec is not None:
        buf.write(f"# spec={json.dumps(spec.to_dict(), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        [
            "cell",
            "mode",
            "omega",
            "n_seeds",
            "mean_final_reward",
            "mean_final_exact_return",
            "mean_final_cover_rate",
            "per_seed_final_reward",
            "per_seed_final_exact_return",
            "per_seed_final_cover_rate",
            "errors",
        ]
    )
    for c in summaries:
        w.writerow(
            [
                c.cell,
                c.mode,
                repr(c.omega),
                len(c.final_reward),
                repr(c.mean_final_reward),
                repr(c.mean_final_exact_return),
                repr(c.mean_final_cover_rate),
                _per_seed(c.final_reward),
                _per_seed(c.final_exact_return),
                _per_seed(c.final_cover_rate),
                ";".join(f"{k}:{v}" for k, v in sorted(c.errors.items())),
            ]
        )
    return buf.getvalue()


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_sweep(spec: SweepSpec, out_dir=None, jobs: int | None = None) -> SweepResult:
    """Train every (cell, seed) pair and aggregate final metrics.

    With ``out_dir`` set, writes runs/<cell>/<seed>.csv, aggregate.csv and
    resolved_config.json. Output is independent of ``jobs``.
    """
    game = spec.resolve_game()
    cells = spec.cells()
    tasks = [(cell, mode, w, seed) for cell, mode, w in cells for seed in spec.seeds]
    args = [(game, spec.config_for(mode, w, seed)) for _, mode, w, seed in tasks]
    jobs = default_jobs() if jobs is None else int(jobs)
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    if jobs == 1 or len(args) == 1:
        results = [_run_one(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, args))

    runs: dict = {cell: {} for cell, _, _ in cells}
    for (cell, _, _, seed), res in zip(tasks, results):
        runs[cell][seed] = res
    summaries = [summarize(cell, mode, w, runs[cell]) for cell, mode, w in cells]
    result = SweepResult(spec, runs, summaries)
    if out_dir is not None:
        write_sweep(result, out_dir)
    return result


def write_sweep(result: SweepResult, out_dir):
    out = Path(out_dir)
    for cell, seeds in result.runs.items():
        d = out / "runs" / cell
        d.mkdir(parents=True, exist_ok=True)
        for seed, (metrics, error) in sorted(seeds.items()):
            if metrics is not None:
                metrics.save_csv(d / f"{seed}.csv")
            else:
                (d / f"{seed}.error.txt").write_text(error + "\n")
    (out / "aggregate.csv").write_text(result.aggregate_csv())
    write_json(out / "resolved_config.json", {"sweep": result.spec.to_dict()})


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- exact-layer report ----------------------------------------------------


def exact_report(
    game: MarkovGame,
    omega_list,
    modes=("hard_replace", "moving_average"),
    cfg: SolverConfig | None = None,
    tau: float = 0.1,
    k_max: int = 1000,
    monotone_tol: float = 1e-9,
) -> dict:
    """Mirror iteration from the uniform policy for every omega and mode.

    Each row records the iterate returns, monotonicity flags, the match of
    the final policy with the predicted limit, and the optimality gap against
    its bound. Per omega, the limit policies of the two modes are compared.
    """
    base = cfg or SolverConfig(tol=1e-12)
    v_star, _ = standard_value_iteration(game, SolverConfig(tol=1e-12))
    pi0 = uniform_table(game)
    rows, cross = [], []
    for w in omega_list:
        w = float(w)
        if not w > 0:
            raise InvalidArgument(f"omega must be > 0, got {w}")
        c = SolverConfig(omega=w, tol=base.tol, max_iters=base.max_iters, tie_tol=base.tie_tol)
        finals = {}
        for mode in modes:
            res = mirror_iteration(game, pi0, w, mode, k_max=k_max, cfg=c, tau=tau)
            pol = res.policy
            finals[mode] = pol
            v_pi, _ = policy_values(game, pol)
            gap = float(np.abs(v_pi - v_star).max())
            bound = w * math.log(game.n_joint_actions) / (1.0 - game.gamma)
            pred = limit_policy_prediction(pi0, res.q_tilde, c.tie_tol)
            rows.append(
                {
                    "omega": w,
                    "mode": res.mode,
                    "tau": res.tau,
                    "n_iterates": len(res.iterates) - 1,
                    "converged": res.converged,
                    "iterate_returns": [float(x) for x in res.returns()],
                    "iterate_regularized_returns": [float(x) for x in res.regularized_returns()],
                    "j_monotone": res.min_return_step() >= -monotone_tol,
                    "regularized_monotone": res.min_regularized_step() >= -monotone_tol,
                    "z_monotone": res.min_log_z_step() >= -monotone_tol,
                    "limit_policy_tv": float(total_variation(pol, pred).max()),
                    "gap": gap,
                    "bound": bound,
                    "holds": gap <= bound + 1e-6,
                }
            )
        if len(finals) == 2:
            a, b = finals.values()
            tv = float(total_variation(a, b).max())
            cross.append({"omega": w, "mode_tv": tv, "modes_agree": tv <= 1e-4})
    return {
        "version": f"dmac {__version__}",
        "game": repr(game),
        "optimal_return": float(game.initial_state_dist @ v_star),
        "tau": tau,
        "k_max": k_max,
        "solver": {"tol": base.tol, "tie_tol": base.tie_tol, "max_iters": base.max_iters},
        "rows": rows,
        "cross_mode": cross,
    }


def compare_trained_vs_exact(game: MarkovGame, cfg: TrainerConfig, k_max: int = 1000) -> dict:
    """Train, then compare the learned policy with the exact limit policy.

    With omega > 0 the reference is the converged mirror-iteration policy from
    the uniform start; with omega = 0 it is the greedy policy of standard
    value iteration.
    """
    metrics = train(game, cfg)
    learned = metrics.policy.joint_table()
    solver = SolverConfig(omega=max(cfg.omega, 1e-12), tol=1e-12)
    v_star, q_star = standard_value_iteration(game, solver)
    if cfg.omega > 0:
        res = mirror_iteration(game, uniform_table(game), cfg.omega, "hard_replace", k_max=k_max, cfg=solver)
        reference = res.policy
        ref_kind = "mirror_limit"
    else:
        reference = np.zeros_like(learned)
        reference[np.arange(game.n_states), q_star.argmax(axis=1)] = 1.0
        ref_kind = "greedy_value_iteration"
    tv = total_variation(learned, reference)
    return {
        "version": f"dmac {__version__}",
        "config": cfg.to_dict(),
        "reference": ref_kind,
        "trained_return": exact_return(game, learned),
        "reference_return": exact_return(game, reference),
        "optimal_return": float(game.initial_state_dist @ v_star),
        "per_state_tv": [float(x) for x in tv],
        "max_tv": float(tv.max()),
        "final_metrics": metrics.summary(),
    }
