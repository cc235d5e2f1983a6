import csv
import json
import math

import numpy as np
import pytest
from helpers import one_state_game, small_random_game, tie_game

from dmac import harness
from dmac.errors import InvalidArgument
from dmac.exact import SolverConfig
from dmac.game import save_game
from dmac.harness import (
    DEFAULT_OMEGAS,
    DIDACTIC_OVERRIDES,
    SweepSpec,
    compare_trained_vs_exact,
    exact_report,
    didactic_game,
    run_sweep,
)
from dmac.trainer import TrainerConfig, read_metrics_csv

TINY = {"episodes": 20, "eval_every": 5, "eval_episodes": 1, "batch_size": 8, "critic_lr": 0.2, "actor_lr": 0.02}


def data_rows(text):
    return list(csv.DictReader([ln for ln in text.splitlines() if not ln.startswith("#")]))


def test_didactic_game_shape():
    g = didactic_game()
    assert (g.n_states, g.n_agents, g.n_joint_actions, g.horizon, g.gamma) == (30, 3, 125, 30, 0.99)
    assert DEFAULT_OMEGAS == (0.001, 0.01, 0.1, 0.2, 1.0, 10.0, 100.0)
    TrainerConfig.from_dict(DIDACTIC_OVERRIDES)


def test_spec_cells_and_configs():
    spec = SweepSpec(small_random_game(0), omegas=[0.1, 1], modes=["dmac", "no_reg", "entropy"], seeds=[0, 1], overrides=TINY)
    names = [c[0] for c in spec.cells()]
    assert names == ["dmac_omega_0.1", "dmac_omega_1", "no_reg", "entropy_omega_0.1", "entropy_omega_1"]
    cfg = spec.config_for("entropy", 1.0, 1)
    assert cfg.target_mode == "uniform" and cfg.omega == 1.0 and cfg.seed == 1 and cfg.episodes == 20
    assert spec.config_for("dmac", 0.1, 0).target_mode == "moving"


@pytest.mark.parametrize(
    "kwargs",
    [{"omegas": []}, {"seeds": []}, {"modes": ["bogus"]}, {"omegas": [-1.0]}, {"overrides": {"nope": 1}}],
)
def test_spec_rejects_bad_input(kwargs):
    with pytest.raises(InvalidArgument):
        SweepSpec(small_random_game(0), **kwargs)


def test_sweep_writes_expected_files(tmp_path):
    g = small_random_game(1)
    spec = SweepSpec(g, omegas=[0.1, 1.0], modes=["dmac", "no_reg"], seeds=[0, 1, 2], overrides=TINY)
    res = run_sweep(spec, tmp_path, jobs=1)
    files = sorted(p.relative_to(tmp_path).as_posix() for p in (tmp_path / "runs").rglob("*.csv"))
    assert len(files) == 9
    assert "runs/no_reg/2.csv" in files and "runs/dmac_omega_0.1/0.csv" in files
    assert (tmp_path / "aggregate.csv").exists() and (tmp_path / "resolved_config.json").exists()
    rows = data_rows((tmp_path / "aggregate.csv").read_text())
    assert [r["cell"] for r in rows] == ["dmac_omega_0.1", "dmac_omega_1", "no_reg"]
    for r in rows:
        assert int(r["n_seeds"]) == 3 and r["errors"] == ""
    run = read_metrics_csv(tmp_path / "runs/dmac_omega_1/2.csv")
    assert run == res.runs["dmac_omega_1"][2][0].rows
    assert json.loads((tmp_path / "resolved_config.json").read_text())["sweep"]["seeds"] == [0, 1, 2]


def test_single_cell_aggregate_is_mean_of_run_finals():
    g = small_random_game(2)
    spec = SweepSpec(g, omegas=[0.2], seeds=[0, 1, 2], overrides=TINY)
    res = run_sweep(spec, jobs=1)
    finals = [res.runs["dmac_omega_0.2"][s][0].tail("exact_return", 0.1).mean() for s in (0, 1, 2)]
    cell = res.cell("dmac_omega_0.2")
    assert cell.mean_final_exact_return == pytest.approx(np.mean(finals), abs=1e-12)
    row = data_rows(res.aggregate_csv())[0]
    assert float(row["mean_final_exact_return"]) == cell.mean_final_exact_return
    per_seed = dict(item.split(":") for item in row["per_seed_final_exact_return"].split(";"))
    assert float(per_seed["1"]) == cell.final_exact_return[1]


def test_sweep_is_deterministic_and_order_invariant():
    g = small_random_game(3)
    a = run_sweep(SweepSpec(g, omegas=[0.1], seeds=[0, 1, 2], overrides=TINY), jobs=1)
    b = run_sweep(SweepSpec(g, omegas=[0.1], seeds=[2, 0, 1], overrides=TINY), jobs=1)
    ca, cb = a.cell("dmac_omega_0.1"), b.cell("dmac_omega_0.1")
    assert ca.final_exact_return == cb.final_exact_return
    assert ca.mean_final_exact_return == cb.mean_final_exact_return
    assert ca.mean_final_reward == cb.mean_final_reward


def test_parallel_sweep_matches_serial(tmp_path):
    g = small_random_game(4)
    spec = SweepSpec(g, omegas=[0.1, 1.0], seeds=[0, 1], overrides=TINY)
    serial = run_sweep(spec, tmp_path / "a", jobs=1)
    parallel = run_sweep(spec, tmp_path / "b", jobs=2)
    assert serial.aggregate_csv() == parallel.aggregate_csv()
    assert (tmp_path / "a/runs/dmac_omega_1/1.csv").read_bytes() == (tmp_path / "b/runs/dmac_omega_1/1.csv").read_bytes()


def test_failed_run_is_recorded(monkeypatch, tmp_path):
    real = harness.train

    def flaky(game, cfg):
        if cfg.seed == 1:
            raise FloatingPointError("boom")
        return real(game, cfg)

    monkeypatch.setattr(harness, "train", flaky)
    res = run_sweep(SweepSpec(small_random_game(5), omegas=[0.1], seeds=[0, 1], overrides=TINY), tmp_path, jobs=1)
    cell = res.cell("dmac_omega_0.1")
    assert list(cell.final_reward) == [0] and "boom" in cell.errors[1]
    assert (tmp_path / "runs/dmac_omega_0.1/1.error.txt").exists()
    assert data_rows(res.aggregate_csv())[0]["errors"].startswith("1:FloatingPointError")


def test_spec_game_from_file(tmp_path):
    g = small_random_game(6)
    save_game(g, tmp_path / "g.json")
    spec = SweepSpec(str(tmp_path / "g.json"), omegas=[0.1], seeds=[0], overrides=TINY)
    loaded = spec.resolve_game()
    assert np.array_equal(loaded.transition, g.transition) and np.array_equal(loaded.reward, g.reward)
    assert loaded.gamma == g.gamma


def test_cover_rate_never_decreases_within_runs():
    res = run_sweep(SweepSpec(small_random_game(7), omegas=[0.01, 10.0], seeds=[0, 1], overrides=TINY), jobs=1)
    for seeds in res.runs.values():
        for metrics, _ in seeds.values():
            assert np.all(np.diff(metrics.column("cover_rate")) >= 0)


# -- exact report -------------------------------------------------------------


def test_exact_report_flags():
    g = small_random_game(8, max_states=5)
    rep = exact_report(g, [0.05, 0.5], cfg=SolverConfig(tol=1e-12), k_max=400)
    assert len(rep["rows"]) == 4 and len(rep["cross_mode"]) == 2
    for row in rep["rows"]:
        assert row["j_monotone"] and row["regularized_monotone"] and row["z_monotone"]
        assert row["holds"] and row["gap"] <= row["bound"]
        assert row["iterate_returns"][-1] >= row["iterate_returns"][0] - 1e-9
    json.dumps(rep)
    with pytest.raises(InvalidArgument):
        exact_report(g, [0.0])


def test_exact_report_limit_match_on_tie_game():
    g = tie_game(0, n_states=3)
    rep = exact_report(g, [0.1], k_max=2000)
    for row in rep["rows"]:
        assert row["converged"] and row["limit_policy_tv"] <= 1e-4
    assert rep["cross_mode"][0]["modes_agree"]


# -- trained vs exact ---------------------------------------------------------


def test_compare_on_one_state_game():
    g = one_state_game([1.0, 0.0, 0.5], gamma=0.5)
    cfg = TrainerConfig(omega=0.1, episodes=400, eval_every=100, eval_episodes=1, batch_size=32, critic_lr=0.5, actor_lr=0.05)
    rep = compare_trained_vs_exact(g, cfg)
    assert rep["reference"] == "mirror_limit"
    assert rep["max_tv"] <= 0.05
    assert rep["trained_return"] <= rep["optimal_return"] + 1e-9


def test_compare_zero_omega_uses_greedy_reference():
    g = one_state_game([0.0, 2.0], gamma=0.5)
    cfg = TrainerConfig(omega=0.0, episodes=200, eval_every=100, eval_episodes=1, batch_size=16, critic_lr=0.5, actor_lr=0.05)
    rep = compare_trained_vs_exact(g, cfg)
    assert rep["reference"] == "greedy_value_iteration"
    assert rep["reference_return"] == pytest.approx(rep["optimal_return"], abs=1e-9)
    assert rep["max_tv"] <= 0.05


def test_compare_fields_on_didactic_game():
    cfg = TrainerConfig(omega=0.2, episodes=10, eval_every=5, eval_episodes=1, batch_size=16)
    rep = compare_trained_vs_exact(didactic_game(), cfg, k_max=50)
    assert len(rep["per_state_tv"]) == 30
    for key in ("trained_return", "reference_return", "optimal_return", "max_tv"):
        assert math.isfinite(rep[key])
    json.dumps(rep)
