import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmac.errors import InvalidArgument, ValidationError
from dmac.game import JointActionIndex, generate_random_game
from dmac.policy import (
    AgentPolicy,
    JointPolicy,
    agent_kl,
    agent_probs,
    joint_kl,
    joint_prob,
    kl_divergence,
    load_policy,
    mix_probability,
    sample_joint,
    save_policy,
    soft_update_params,
)


def random_policy(acts, S=3, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return JointPolicy([AgentPolicy(scale * rng.standard_normal((S, n)), i) for i, n in enumerate(acts)])


def test_agent_probs_uniform():
    p = agent_probs(AgentPolicy(np.zeros((1, 5))), 0)
    assert np.allclose(p, 0.2, rtol=0, atol=1e-15)


def test_agent_probs_closed_form():
    p = agent_probs(AgentPolicy(np.log([[1.0, 3.0]])), 0)
    assert np.allclose(p, [0.25, 0.75], rtol=0, atol=1e-15)


def test_agent_probs_shift_invariant_and_stable():
    # dyadic logits keep the shifted values exact, so only the softmax is tested
    logits = np.array([[0.25, -1.5, 2.0]])
    a = agent_probs(AgentPolicy(logits), 0)
    b = agent_probs(AgentPolicy(logits + 1024.0), 0)
    assert np.abs(a - b).max() <= 1e-15
    big = agent_probs(AgentPolicy(np.array([[1000.0, 0.0]])), 0)
    assert np.all(np.isfinite(big)) and big[0] == 1.0


def test_agent_probs_rejects_bad_state():
    with pytest.raises(InvalidArgument):
        agent_probs(AgentPolicy(np.zeros((2, 2))), 2)


def test_policy_rejects_nonfinite_logits():
    with pytest.raises(ValidationError):
        AgentPolicy(np.array([[np.nan, 0.0]]))


def test_joint_prob_uniform_two_agents():
    pol = JointPolicy([AgentPolicy(np.zeros((1, 2)), 0), AgentPolicy(np.zeros((1, 2)), 1)])
    assert all(joint_prob(pol, 0, a) == 0.25 for a in range(4))


def test_joint_prob_single_agent_equals_agent_probs():
    pol = random_policy((4,))
    p = agent_probs(pol.agents[0], 1)
    assert all(joint_prob(pol, 1, a) == p[a] for a in range(4))


def test_joint_prob_brute_force():
    acts = (2, 3, 2)
    pol = random_policy(acts, seed=4)
    table = pol.joint_table()
    for s in range(3):
        for flat, per_agent in enumerate(itertools.product(*(range(n) for n in acts))):
            brute = math.prod(agent_probs(pol.agents[i], s)[a] for i, a in enumerate(per_agent))
            assert joint_prob(pol, s, flat) == pytest.approx(brute, abs=1e-15)
            assert joint_prob(pol, s, JointActionIndex(flat, per_agent)) == pytest.approx(brute, abs=1e-15)
            assert table[s, flat] == pytest.approx(brute, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 10**6), st.floats(0.1, 5.0))
def test_joint_table_sums_to_one(acts, seed, scale):
    pol = random_policy(acts, seed=seed, scale=scale)
    assert np.abs(pol.joint_table().sum(axis=1) - 1).max() <= 1e-10
    assert np.allclose(np.exp(pol.log_joint_table()), pol.joint_table(), rtol=1e-12, atol=1e-300)


def test_sample_joint_deterministic_policy():
    pol = JointPolicy([AgentPolicy(np.array([[50.0, 0.0, 0.0]]))])
    rng = np.random.default_rng(0)
    hits = sum(sample_joint(pol, 0, rng).flat == 0 for _ in range(10_000))
    assert hits >= 9990


def test_sample_joint_uniform_frequencies():
    pol = JointPolicy([AgentPolicy(np.zeros((1, 2)), 0), AgentPolicy(np.zeros((1, 2)), 1)])
    rng = np.random.default_rng(1)
    n = 100_000
    counts = np.bincount([sample_joint(pol, 0, rng).flat for _ in range(n)], minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sigma)


def test_sample_joint_reproducible_and_consistent():
    pol = random_policy((3, 2))
    seq = lambda: [sample_joint(pol, 1, np.random.default_rng(9)) for _ in range(1)] + [
        x for x in (lambda r: [sample_joint(pol, 2, r) for _ in range(20)])(np.random.default_rng(9))
    ]
    assert seq() == seq()
    a = sample_joint(pol, 0, np.random.default_rng(3))
    assert a.flat == a.per_agent[0] * 2 + a.per_agent[1]


def test_kl_zero_for_equal_policies():
    pol = random_policy((3, 2))
    assert abs(joint_kl(pol, pol.copy(), 0)) <= 1e-12


def test_kl_hand_value():
    pi = JointPolicy([AgentPolicy(np.log([[0.75, 0.25]]))])
    rho = JointPolicy([AgentPolicy(np.zeros((1, 2)))])
    oracle = float(mpmath.mpf("0.75") * mpmath.log("1.5") + mpmath.mpf("0.25") * mpmath.log("0.5"))
    assert joint_kl(pi, rho, 0) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.130812, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 10**6))
def test_kl_factorizes_over_agents(acts, seed):
    pi = random_policy(acts, seed=seed)
    rho = random_policy(acts, seed=seed + 1)
    for s in range(3):
        p = pi.joint_table()[s]
        q = rho.joint_table()[s]
        joint_space = float(np.sum(p * (np.log(p) - np.log(q))))
        assert joint_kl(pi, rho, s) == pytest.approx(joint_space, abs=1e-10)
        assert joint_kl(pi, rho, s) >= 0


def test_kl_divergence_zero_convention():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert agent_kl(AgentPolicy(np.zeros((1, 2))), AgentPolicy(np.zeros((1, 2))), 0) == 0.0


def test_soft_update_endpoints():
    online = random_policy((3, 2), seed=1)
    target = random_policy((3, 2), seed=2)
    before = [a.logits.copy() for a in target.agents]
    soft_update_params(target, online, 0.0)
    assert all(np.array_equal(b, a.logits) for b, a in zip(before, target.agents))
    soft_update_params(target, online, 1.0)
    assert all(np.array_equal(t.logits, o.logits) for t, o in zip(target.agents, online.agents))


def test_soft_update_default_tau():
    online = random_policy((3, 2), seed=1)
    target = random_policy((3, 2), seed=2)
    expected = [0.99 * t.logits + 0.01 * o.logits for t, o in zip(target.agents, online.agents)]
    soft_update_params(target, online, 0.01)
    for e, t in zip(expected, target.agents):
        assert np.abs(e - t.logits).max() <= 1e-15


@settings(max_examples=25, deadline=None)
@given(st.floats(0.001, 0.5), st.integers(1, 200), st.integers(0, 10**6))
def test_soft_update_geometric_convergence(tau, k, seed):
    online = random_policy((3,), seed=seed)
    target = random_policy((3,), seed=seed + 7)
    gap0 = np.abs(target.agents[0].logits - online.agents[0].logits).max()
    for _ in range(k):
        soft_update_params(target, online, tau)
    gap = np.abs(target.agents[0].logits - online.agents[0].logits).max()
    assert gap == pytest.approx((1 - tau) ** k * gap0, abs=1e-12)


def test_soft_update_rejects_bad_tau_and_shapes():
    a, b = random_policy((3,)), random_policy((2,))
    with pytest.raises(InvalidArgument):
        soft_update_params(a, a.copy(), 1.5)
    with pytest.raises(InvalidArgument):
        soft_update_params(a, b, 0.5)


def test_mix_probability_examples():
    pol = random_policy((3, 2))
    same = mix_probability(pol, pol, 0.3)
    for m, t in zip(same, pol.agent_tables()):
        assert np.allclose(m, t, rtol=0, atol=1e-15)
    other = random_policy((3, 2), seed=5)
    full = mix_probability(pol, other, 1.0)
    for m, t in zip(full, other.agent_tables()):
        assert np.array_equal(m, t)
    half = mix_probability(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0.5)
    assert half.tolist() == [[0.5, 0.5]]


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 1.0), st.integers(0, 10**6))
def test_mix_probability_rows_sum_to_one(tau, seed):
    a, b = random_policy((4, 3), seed=seed), random_policy((4, 3), seed=seed + 1)
    for m in mix_probability(a, b, tau):
        assert np.abs(m.sum(axis=1) - 1).max() <= 1e-12
        assert np.all(m > 0)


@pytest.mark.parametrize("tau", [0.0, -0.1, 1.01])
def test_mix_probability_rejects_tau(tau):
    pol = random_policy((2,))
    with pytest.raises(InvalidArgument):
        mix_probability(pol, pol, tau)


def test_policy_snapshot_round_trip(tmp_path):
    g = generate_random_game(0, 3, 2, [3, 2], 5, 0.9)
    pol = random_policy((3, 2), S=3, seed=8)
    save_policy(pol, tmp_path / "p.json")
    back = load_policy(tmp_path / "p.json", g)
    for a, b in zip(pol.agents, back.agents):
        assert a.logits.tobytes() == b.logits.tobytes()
    g_other = generate_random_game(0, 4, 2, [3, 2], 5, 0.9)
    with pytest.raises(InvalidArgument):
        load_policy(tmp_path / "p.json", g_other)
