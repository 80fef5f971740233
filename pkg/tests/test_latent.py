import itertools

import numpy as np
import pytest

from cliquecast.latent import EnumerationCapError, GibbsLatent, hamming


def brute_force_probs(cards, node_factors, edge_factors):
    """Independent enumeration oracle: probabilities by direct summation."""
    logs = {}
    for assignment in itertools.product(*(range(c) for c in cards)):
        s = sum(node_factors[i][z] for i, z in enumerate(assignment))
        s += sum(f[assignment[i], assignment[j]] for (i, j), f in edge_factors.items())
        logs[assignment] = s
    m = max(logs.values())
    total = sum(np.exp(v - m) for v in logs.values())
    return {a: float(np.exp(v - m) / total) for a, v in logs.items()}


def random_gibbs(rng, n_agents=None, card_max=6):
    n = n_agents or int(rng.integers(1, 5))
    cards = [int(rng.integers(2, card_max + 1)) for _ in range(n)]
    node = [rng.normal(size=c) for c in cards]
    edge = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.8:
                edge[(i, j)] = rng.normal(size=(cards[i], cards[j]))
    g = GibbsLatent(agent_ids=[f"a{i}" for i in range(n)], cards=cards,
                    node_factors=node, edge_factors=edge)
    return g


def test_uniform_when_all_factors_zero():
    g = GibbsLatent(agent_ids=["a", "b"], cards=[6, 6],
                    node_factors=[np.zeros(6), np.zeros(6)],
                    edge_factors={(0, 1): np.zeros((6, 6))})
    for assignment in [(0, 0), (3, 2), (5, 5)]:
        assert abs(np.exp(g.log_prob(assignment)) - 1 / 36) < 1e-12


def test_single_node_direct_normalization():
    g = GibbsLatent(agent_ids=["a"], cards=[2],
                    node_factors=[np.array([0.0, np.log(3.0)])], edge_factors={})
    assert abs(np.exp(g.log_prob((0,))) - 0.25) < 1e-12
    assert abs(np.exp(g.log_prob((1,))) - 0.75) < 1e-12


def test_log_prob_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(25):
        g = random_gibbs(rng)
        oracle = brute_force_probs(g.cards, g.node_factors, g.edge_factors)
        for assignment, p in oracle.items():
            assert abs(np.exp(g.log_prob(assignment)) - p) < 1e-9
        assert abs(sum(np.exp(g.log_prob(a)) for a in oracle) - 1.0) < 1e-9


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        GibbsLatent(agent_ids=[f"a{i}" for i in range(6)], cards=[6] * 6,
                    node_factors=[np.zeros(6)] * 6, edge_factors={})


def test_top_modes_uniform_tie_break():
    g = GibbsLatent(agent_ids=["a", "b"], cards=[3, 3],
                    node_factors=[np.zeros(3), np.zeros(3)], edge_factors={})
    top = g.top_modes(3)
    assert [t[0].values for t in top] == [(0, 0), (0, 1), (0, 2)]
    assert all(abs(p - 1 / 9) < 1e-12 for _, p in top)


def test_top_modes_caps_at_space_size():
    g = GibbsLatent(agent_ids=["a", "b"], cards=[6, 6],
                    node_factors=[np.random.default_rng(1).normal(size=6)] * 2,
                    edge_factors={})
    top = g.top_modes(40)
    assert len(top) == 36
    probs = [p for _, p in top]
    assert all(a >= b - 1e-15 for a, b in zip(probs, probs[1:]))
    assert abs(sum(probs) - 1.0) < 1e-9


def test_top_modes_matches_oracle_ranking():
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = random_gibbs(rng, n_agents=3)
        oracle = brute_force_probs(g.cards, g.node_factors, g.edge_factors)
        want = sorted(oracle.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        got = g.top_modes(5)
        for (wa, wp), (ga, gp) in zip(want, got):
            assert abs(wp - gp) < 1e-9
            assert wa == ga.values


def test_training_sample_returns_all_when_space_small():
    g = GibbsLatent(agent_ids=["a"], cards=[4],
                    node_factors=[np.array([0.1, 0.5, -0.2, 0.9])], edge_factors={})
    rng = np.random.default_rng(0)
    samples = g.training_sample(6, 4, rng)
    assert len(samples) == 4
    oracle = {a: np.exp(g.log_prob(a)) for a in [(0,), (1,), (2,), (3,)]}
    for assignment, w in samples:
        assert abs(w - oracle[assignment.values]) < 1e-12


def test_training_sample_weights_sum_to_one():
    rng = np.random.default_rng(1)
    g = random_gibbs(rng, n_agents=3, card_max=5)
    samples = g.training_sample(3, 2, rng)
    assert abs(sum(w for _, w in samples) - 1.0) < 1e-9


def test_training_sample_deterministic_when_no_random_part():
    rng = np.random.default_rng(2)
    g = random_gibbs(rng, n_agents=2)
    s1 = g.training_sample(3, 0, np.random.default_rng(10))
    s2 = g.training_sample(3, 0, np.random.default_rng(99))
    assert [a.values for a, _ in s1] == [a.values for a, _ in s2]
    top = g.top_modes(3)
    total = sum(p for _, p in top)
    for (a, w), (ta, tp) in zip(s1, top):
        assert a.values == ta.values
        assert abs(w - tp / total) < 1e-12


def test_hamming_examples():
    assert hamming([0, 1, 2], [1, 1, 2]) == 1
    assert hamming([1, 0, 0], [2, 1, 0]) == 2
    with pytest.raises(ValueError):
        hamming([0, 1], [0, 1, 2])


def test_diverse_sample_beta_zero_is_top_k():
    rng = np.random.default_rng(3)
    g = random_gibbs(rng, n_agents=3)
    top = g.top_modes(4)
    div = g.diverse_sample(4, beta=0)
    assert [a.values for a, _ in div] == [a.values for a, _ in top]


def test_diverse_sample_hamming_constraint():
    rng = np.random.default_rng(4)
    for _ in range(10):
        g = random_gibbs(rng, n_agents=3)
        for beta in (1, 2, 3):
            picked = g.diverse_sample(5, beta)
            for (a, _), (b, _) in itertools.combinations(picked, 2):
                assert hamming(a, b) >= beta


def test_diverse_sample_stops_when_infeasible():
    g = GibbsLatent(agent_ids=["a"], cards=[3],
                    node_factors=[np.array([0.0, 1.0, 2.0])], edge_factors={})
    picked = g.diverse_sample(5, beta=1)
    assert len(picked) == 3  # single position: at most card distinct values


def test_condition_two_agents():
    rng = np.random.default_rng(6)
    f_a = rng.normal(size=4)
    f_b = rng.normal(size=3)
    f_ab = rng.normal(size=(4, 3))
    g = GibbsLatent(agent_ids=["a", "b"], cards=[4, 3],
                    node_factors=[f_a, f_b], edge_factors={(0, 1): f_ab})
    reduced = g.condition(["a"])
    assert reduced.agent_ids == ["b"]
    want = np.exp(f_b) / np.exp(f_b).sum()
    for z in range(3):
        assert abs(np.exp(reduced.log_prob((z,))) - want[z]) < 1e-12


def test_condition_matches_surviving_factor_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g = random_gibbs(rng, n_agents=3)
        reduced = g.condition(["a0"])
        keep = {k - 1 for k in (1, 2)}
        node = [g.node_factors[1], g.node_factors[2]]
        edge = {}
        if (1, 2) in g.edge_factors:
            edge[(0, 1)] = g.edge_factors[(1, 2)]
        oracle = brute_force_probs([g.cards[1], g.cards[2]], node, edge)
        for assignment, p in oracle.items():
            assert abs(np.exp(reduced.log_prob(assignment)) - p) < 1e-9


def test_condition_empty_set_is_identity():
    rng = np.random.default_rng(8)
    g = random_gibbs(rng, n_agents=3)
    same = g.condition([])
    for _ in range(5):
        a = tuple(int(rng.integers(0, c)) for c in g.cards)
        assert abs(g.log_prob(a) - same.log_prob(a)) < 1e-12


def test_condition_everything_rejected():
    rng = np.random.default_rng(9)
    g = random_gibbs(rng, n_agents=2)
    with pytest.raises(ValueError):
        g.condition(["a0", "a1"])
    with pytest.raises(KeyError):
        g.condition(["nope"])
