"""Command-line interface: ``dmac {gen-game,solve,train,sweep,compare}``.

Every option can also come from a flat ``key=value`` file given with
``--config``; keys are the option names with dashes replaced by
underscores. Flags given on the command line win over the file.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ConvergenceError, GameFileError, InvalidArgument, ValidationError
from .exact import SolverConfig
from .game import generate_random_game, load_game, save_game
from .harness import (
    DEFAULT_OMEGAS,
    DIDACTIC_OVERRIDES,
    SweepSpec,
    compare_trained_vs_exact,
    default_jobs,
    exact_report,
    run_sweep,
    write_json,
)
from .trainer import TrainerConfig, train


class UsageError(Exception):
    pass


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list:
    return [x.strip() for x in str(text).split(",") if x.strip()]


_TRAINER_FLAGS = {
    # flag dest: (type, help)
    "tau": (float, "target soft-update rate"),
    "critic_lr": (float, "critic step size"),
    "actor_lr": (float, "actor step size"),
    "batch_size": (int, "minibatch size"),
    "buffer_capacity": (int, "replay buffer capacity"),
    "episodes": (int, "training episodes"),
    "eval_every": (int, "episodes between evaluations"),
    "eval_episodes": (int, "rollouts per evaluation"),
    "critic_kind": (str, "joint or lvd"),
    "next_action_mode": (str, "expected or sampled"),
    "actor_mode": (str, "expected or sampled"),
    "target_mode": (str, "moving or uniform"),
    "actor_optimizer": (str, "rmsprop or sgd"),
}

_REQUIRED = {
    "gen-game": ("seed", "states", "agents", "actions", "horizon", "gamma", "output"),
    "solve": (),
    "train": ("game",),
    "sweep": ("game",),
    "compare": ("game",),
}

_DEFAULTS = {
    "out_dir": ".",
    "jobs": None,
    "omega": 0.2,
    "mode": "both",
    "tau_mirror": 0.1,
    "k_max": 1000,
    "tol": 1e-12,
    "seed": 0,
    "seeds": 5,
    "omegas": list(DEFAULT_OMEGAS),
    "modes": ["dmac"],
    "preset": "none",
}


def _add_global(p: argparse.ArgumentParser):
    g = p.add_argument_group("global options")
    g.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS, help="output directory (default: .)")
    g.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes for sweeps (default: all CPUs)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="flat key=value file; flags override it")


def _add_trainer(p: argparse.ArgumentParser):
    g = p.add_argument_group("trainer options")
    for dest, (typ, help_text) in _TRAINER_FLAGS.items():
        g.add_argument("--" + dest.replace("_", "-"), dest=dest, type=typ, default=argparse.SUPPRESS, help=help_text)
    g.add_argument("--preset", choices=("none", "didactic"), default=argparse.SUPPRESS, help="tabular step sizes for the didactic game")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="dmac", description="Divergence-regularized multi-agent actor-critic on finite games.")
    parser.add_argument("--version", action="version", version=f"dmac {__version__}")
    _add_global(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-game", help="generate a random cooperative game")
    _add_global(p)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--states", type=int, default=S)
    p.add_argument("--agents", type=int, default=S)
    p.add_argument("--actions", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("-o", "--output", default=S, help="game file to write")

    p = sub.add_parser("solve", help="exact mirror-iteration report")
    _add_global(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--game", default=S)
    src.add_argument("--demo", action="store_true", default=S, help="use a tiny built-in game")
    p.add_argument("--omega", type=_float_list, default=S, help="regularization strength(s), comma-separated")
    p.add_argument("--mode", choices=("hard", "moving", "both"), default=S)
    p.add_argument("--tau", dest="tau_mirror", type=float, default=S, help="moving-average rate (default 0.1)")
    p.add_argument("--k-max", dest="k_max", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)

    for name, help_text in (("train", "train one run"), ("compare", "train and compare with the exact solution")):
        p = sub.add_parser(name, help=help_text)
        _add_global(p)
        p.add_argument("--game", default=S)
        p.add_argument("--omega", type=float, default=S)
        p.add_argument("--seed", type=int, default=S)
        _add_trainer(p)

    p = sub.add_parser("sweep", help="omega sweep over seeds")
    _add_global(p)
    p.add_argument("--game", default=S)
    p.add_argument("--omegas", type=_float_list, default=S)
    p.add_argument("--seeds", type=int, default=S, help="number of seeds, 0..N-1")
    p.add_argument("--modes", type=_str_list, default=S, help="dmac,no_reg,entropy")
    _add_trainer(p)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return sub.choices[command]


def _parser_types(parser: argparse.ArgumentParser, command: str) -> dict:
    types = {}
    for action in _subparser(parser, command)._actions:
        if action.dest in ("help", "config"):
            continue
        if isinstance(action, argparse._StoreTrueAction):
            types[action.dest] = lambda v: str(v).strip().lower() in ("1", "true", "yes", "on")
        else:
            types[action.dest] = action.type or str
    return types


def read_config_file(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_options(parser, args) -> dict:
    """Merge built-in defaults, config-file values and explicit flags."""
    command = args.command
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    types = _parser_types(parser, command)
    from_file = {}
    if getattr(args, "config", None):
        try:
            raw = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        for key, value in raw.items():
            if key not in types:
                raise UsageError(f"unknown config key {key!r} for {command}")
            try:
                from_file[key] = types[key](value)
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad config value for {key}: {exc}") from None
    resolved = {k: v for k, v in _DEFAULTS.items() if k in types}
    resolved.update(from_file)
    resolved.update(given)
    missing = [k for k in _REQUIRED[command] if k not in resolved]
    if command == "solve" and "game" not in resolved and not resolved.get("demo"):
        missing.append("game (or --demo)")
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    resolved["command"] = command
    if resolved.get("jobs") is None and "jobs" in types:
        resolved["jobs"] = default_jobs()
    return resolved


def _trainer_config(opts: dict, omega: float | None = None, seed: int | None = None) -> TrainerConfig:
    values = dict(DIDACTIC_OVERRIDES) if opts.get("preset") == "didactic" else {}
    for key in _TRAINER_FLAGS:
        if key in opts:
            values[key] = opts[key]
    if omega is not None:
        values["omega"] = omega
    if seed is not None:
        values["seed"] = seed
    return TrainerConfig.from_dict(values)


def demo_game():
    return generate_random_game(0, 3, 2, 2, 10, 0.9)


# -- commands --------------------------------------------------------------


def cmd_gen_game(opts: dict) -> int:
    try:
        game = generate_random_game(opts["seed"], opts["states"], opts["agents"], opts["actions"], opts["horizon"], opts["gamma"])
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    out = Path(opts["output"])
    save_game(game, out)
    print(
        f"{out}: {game.n_states} states, {game.n_agents} agents, actions {list(game.n_actions_per_agent)}, "
        f"{game.n_joint_actions} joint actions, gamma={game.gamma:g}, horizon={game.horizon}"
    )
    return 0


def cmd_solve(opts: dict) -> int:
    omegas = opts["omega"] if isinstance(opts["omega"], list) else [opts["omega"]]
    if not omegas or any(not w > 0 for w in omegas):
        raise UsageError("--omega must be > 0")
    if opts["k_max"] < 1 or not opts["tol"] > 0 or not 0 < opts["tau_mirror"] <= 1:
        raise UsageError("--k-max must be >= 1, --tol > 0 and --tau in (0, 1]")
    game = demo_game() if opts.get("demo") else load_game(opts["game"])
    modes = {"hard": ("hard_replace",), "moving": ("moving_average",), "both": ("hard_replace", "moving_average")}[opts["mode"]]
    report = exact_report(game, omegas, modes, SolverConfig(tol=opts["tol"]), tau=opts["tau_mirror"], k_max=opts["k_max"])
    out = Path(opts["out_dir"])
    write_json(out / "exact_report.json", report)
    write_json(out / "resolved_config.json", _public(opts))
    for row in report["rows"]:
        print(
            f"omega={row['omega']:g} mode={row['mode']} iterates={row['n_iterates']} "
            f"gap={row['gap']:.3e} bound={row['bound']:.3e} holds={row['holds']} j_monotone={row['j_monotone']}"
        )
    return 0


def cmd_train(opts: dict) -> int:
    game = load_game(opts["game"])
    cfg = _trainer_config(opts, omega=opts["omega"], seed=opts["seed"])
    metrics = train(game, cfg)
    out = Path(opts["out_dir"])
    cell = out / "runs" / f"dmac_omega_{cfg.omega:g}"
    cell.mkdir(parents=True, exist_ok=True)
    metrics.save_csv(cell / f"{cfg.seed}.csv")
    write_json(out / "resolved_config.json", {**_public(opts), "trainer": cfg.to_dict()})
    s = metrics.summary()
    print(
        f"{cell / f'{cfg.seed}.csv'}: omega={cfg.omega:g} seed={cfg.seed} "
        f"final_reward={s['final_mean_episode_reward']:.4f} final_return={s['final_exact_return']:.4f} "
        f"final_cover={s['final_cover_rate']:.4f}"
    )
    return 0


def cmd_sweep(opts: dict) -> int:
    if opts["seeds"] < 1:
        raise UsageError("--seeds must be >= 1")
    base = _trainer_config(opts)
    overrides = {k: v for k, v in base.to_dict().items() if k not in ("omega", "seed") and v != getattr(TrainerConfig, k)}
    try:
        spec = SweepSpec(game=opts["game"], omegas=opts["omegas"], modes=opts["modes"], seeds=range(opts["seeds"]), overrides=overrides)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    out = Path(opts["out_dir"])
    result = run_sweep(spec, out_dir=out, jobs=opts["jobs"])
    write_json(out / "resolved_config.json", {**_public(opts), "sweep": spec.to_dict(), "trainer": base.to_dict()})
    for c in result.summaries:
        print(
            f"{c.cell}: seeds={len(c.final_reward)} mean_final_reward={c.mean_final_reward:.4f} "
            f"mean_final_return={c.mean_final_exact_return:.4f} mean_final_cover={c.mean_final_cover_rate:.4f}"
            + (f" errors={len(c.errors)}" if c.errors else "")
        )
    return 0


def cmd_compare(opts: dict) -> int:
    game = load_game(opts["game"])
    cfg = _trainer_config(opts, omega=opts["omega"], seed=opts["seed"])
    report = compare_trained_vs_exact(game, cfg)
    out = Path(opts["out_dir"])
    write_json(out / "compare_report.json", report)
    write_json(out / "resolved_config.json", {**_public(opts), "trainer": cfg.to_dict()})
    print(
        f"trained_return={report['trained_return']:.4f} reference_return={report['reference_return']:.4f} "
        f"optimal_return={report['optimal_return']:.4f} max_tv={report['max_tv']:.4f}"
    )
    return 0


def _public(opts: dict) -> dict:
    return {k: v for k, v in sorted(opts.items())}


COMMANDS = {"gen-game": cmd_gen_game, "solve": cmd_solve, "train": cmd_train, "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    try:
        opts = resolve_options(parser, args)
        if opts["command"] in ("train", "compare", "sweep"):
            _trainer_config(opts, omega=opts.get("omega"), seed=opts.get("seed") if opts["command"] != "sweep" else None)
        Path(opts["out_dir"]).mkdir(parents=True, exist_ok=True)
        return COMMANDS[opts["command"]](opts)
    except (UsageError, InvalidArgument) as exc:
        _subparser(parser, args.command).print_usage(sys.stderr)
        print(f"dmac {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, GameFileError, ValidationError, ConvergenceError) as exc:
        print(f"dmac: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
