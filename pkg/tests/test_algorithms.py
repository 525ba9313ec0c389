import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbms.algorithms import (
    Exp3,
    Exp4,
    EpsilonGreedy,
    Hedge,
    HedgeState,
    LStarTestSelector,
    MultiscaleHedge,
    RestartedExp3,
    bandit_from_fullinfo,
    build_learner,
    hedge_step,
    multiscale_hedge,
)
from cbms.core import PolicyClassSequence, constant_action_sequence, nested_prior


def drive(learner, losses, uniforms, contexts=None):
    """Play a bandit learner on a fixed loss table; returns the per-round distributions."""
    dists = []
    for t, row in enumerate(losses):
        x = 0 if contexts is None else int(contexts[t])
        p = learner.begin_round(x)
        dists.append(p.copy())
        a = int(np.searchsorted(np.cumsum(p), uniforms[t] * p.sum(), side="right"))
        a = min(a, len(p) - 1)
        learner.update(a, float(row[a]))
    return np.array(dists)


# -- hedge -----------------------------------------------------------------


def test_hedge_step_hand_example():
    s = HedgeState.initial(np.array([0.5, 0.5]), math.log(2))
    s = hedge_step(s, np.array([0.0, 1.0]))
    np.testing.assert_allclose(s.distribution, [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_hedge_step_identity_on_zero_loss():
    s = HedgeState.initial(np.array([0.8, 0.2]), 0.3)
    np.testing.assert_allclose(hedge_step(s, np.zeros(2)).distribution, [0.8, 0.2], atol=1e-15)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.floats(-5, 5), st.floats(0.01, 3))
def test_hedge_shift_invariance(losses, shift, eta):
    n = len(losses)
    s = HedgeState.initial(np.full(n, 1 / n), eta)
    a = hedge_step(s, np.array(losses)).distribution
    b = hedge_step(s, np.array(losses) + shift).distribution
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_hedge_rejects_bad_input():
    s = HedgeState.initial(np.array([0.5, 0.5]), 1.0)
    with pytest.raises(ValueError):
        hedge_step(s, np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        HedgeState.initial(np.array([0.5, 0.5]), 0.0)


def test_hedge_learner_uses_policy_losses():
    seq = PolicyClassSequence(K=2, tables=np.array([[0, 1], [1, 0]]), classes=({0, 1},))
    h = Hedge(seq, T=10, eta=math.log(2))
    h.begin_round(1)
    h.update(np.array([0.0, 1.0]))
    # in context 1, policy 0 plays action 1 (loss 1)
    np.testing.assert_allclose(h.distribution(), [1 / 3, 2 / 3], atol=1e-15)


def test_multiscale_single_rate_matches_hedge():
    seq = constant_action_sequence(3)
    ms = MultiscaleHedge(seq, T=1, prior="uniform")
    assert ms.n_grid == 1
    h = Hedge(seq, T=1, eta=float(ms.etas[0]))
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.random(3)
        np.testing.assert_allclose(ms.begin_round(0), h.begin_round(0), rtol=0, atol=1e-9)
        ms.update(v)
        h.update(v)


def test_multiscale_grid_and_outer_weights():
    seq = PolicyClassSequence(K=2, tables=np.array([[0], [1], [0], [1]]), classes=({0}, {0, 1, 2, 3}))
    T = 100
    ms = multiscale_hedge(seq, T)
    assert ms.n_grid == math.ceil(math.log2(T)) + 1
    np.testing.assert_allclose(ms.etas[0], math.sqrt(8 * math.log(4 * 4) / T))
    np.testing.assert_allclose(ms.etas[1:] / ms.etas[:-1], 0.5)
    rng = np.random.default_rng(1)
    for _ in range(T):
        P = ms.begin_round(0)
        assert abs(P.sum() - 1) <= 1e-9
        assert abs(ms.grid_weights().sum() - 1) <= 1e-9
        ms.update(rng.random(2))


def test_multiscale_concentrates_on_better_policy():
    # policy 0 beats policy 1 by 0.5 every round; the exact Hedge recursion
    # on each grid member gives the oracle mixture
    seq = PolicyClassSequence(K=2, tables=np.array([[0], [1]]), classes=({0, 1},))
    T = 100
    ms = MultiscaleHedge(seq, T)
    oracle_inner = np.tile(np.log(nested_prior(seq)), (ms.n_grid, 1))
    oracle_outer = np.zeros(ms.n_grid)
    loss = np.array([0.0, 0.5])
    for _ in range(T):
        P = ms.begin_round(0)
        inner = np.exp(oracle_inner)
        inner /= inner.sum(axis=1, keepdims=True)
        w = np.exp(oracle_outer - oracle_outer.max())
        w /= w.sum()
        np.testing.assert_allclose(P, w @ inner, rtol=0, atol=1e-9)
        ms.update(loss)
        oracle_outer -= ms.outer_eta * (inner @ loss)
        oracle_inner -= ms.etas[:, None] * loss[None, :]
    assert ms.begin_round(0)[0] > 0.99


# -- exp3 / exp4 -----------------------------------------------------------


def test_exp3_hand_example():
    learner = Exp3(2, T=10, eta=0.1, gamma=0.0)
    learner.begin_round()
    learner.update(0, 1.0)
    w = np.array([math.exp(-0.2), 1.0])
    np.testing.assert_allclose(learner.distribution(), w / w.sum(), rtol=0, atol=1e-15)


def test_exp3_zero_loss_leaves_distribution():
    learner = Exp3(3, T=10, eta=0.5, gamma=0.1)
    before = learner.begin_round()
    learner.update(2, 0.0)
    np.testing.assert_allclose(learner.distribution(), before, atol=1e-15)


def test_exp3_floor_and_default_rates():
    T, K = 1000, 2
    learner = Exp3(K, T, gamma=0.1)
    rng = np.random.default_rng(5)
    probs = drive(learner, rng.random((T, K)), rng.random(T))
    assert probs.min() >= 0.05 - 1e-12
    d = Exp3(K, T)
    assert d.eta == pytest.approx(math.sqrt(2 * math.log(K) / (T * K)))
    assert d.gamma == pytest.approx(min(1.0, math.sqrt(K * math.log(K) / T)))


def test_update_before_begin_round():
    for learner in (Exp3(2, 10), Exp4(constant_action_sequence(2), 10), EpsilonGreedy(constant_action_sequence(2))):
        with pytest.raises(RuntimeError):
            learner.update(0, 1.0)


def test_exp4_context_out_of_range():
    with pytest.raises(ValueError):
        Exp4(constant_action_sequence(2, N_x=3), 10).begin_round(3)


@pytest.mark.parametrize("seed", range(10))
def test_exp4_equals_exp3_on_constant_actions(seed):
    K, T = 3, 200
    rng = np.random.default_rng(seed)
    losses, u = rng.random((T, K)), rng.random(T)
    a = drive(Exp3(K, T), losses, u)
    b = drive(Exp4(constant_action_sequence(K), T), losses, u)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_exp4_identical_policies_keep_prior():
    seq = PolicyClassSequence(K=2, tables=np.array([[1, 0]] * 3), classes=({0}, {0, 1, 2}))
    learner = Exp4(seq, 50, prior="nested")
    rng = np.random.default_rng(2)
    drive(learner, rng.random((50, 2)), rng.random(50), contexts=rng.integers(0, 2, 50))
    np.testing.assert_allclose(learner.policy_distribution(), nested_prior(seq), atol=1e-12)


def test_exp4_nested_prior_is_round_one_distribution():
    seq = PolicyClassSequence(K=3, tables=np.array([[0], [1], [2]]), classes=({0}, {0, 1, 2}))
    np.testing.assert_allclose(Exp4(seq, 10, prior="nested").policy_distribution(), [6 / 7, 1 / 14, 1 / 14])


# -- epsilon-greedy --------------------------------------------------------


def test_epsilon_greedy_starts_exploring():
    learner = EpsilonGreedy(constant_action_sequence(2))
    np.testing.assert_allclose(learner.begin_round(0), [0.5, 0.5])
    assert learner.epsilon == 1.0


def test_epsilon_greedy_follows_dominant_policy():
    seq = PolicyClassSequence(K=3, tables=np.array([[2], [0]]), classes=({0, 1},))
    learner = EpsilonGreedy(seq)
    learner.estimates[:] = [5.0, 1.0]
    learner.t = 10_000
    p = learner.begin_round(0)
    assert int(np.argmax(p)) == 0


def test_epsilon_greedy_finds_planted_arm():
    T, hits = 30, 0
    losses = np.tile([0.0, 1.0], (T, 1))
    for seed in range(100):
        learner = EpsilonGreedy(constant_action_sequence(2))
        u = np.random.default_rng(seed).random(T)
        greedy = []
        for t in range(T):
            learner.begin_round(0)
            greedy.append(learner.greedy_policy())
            p = learner._probs
            a = min(int(np.searchsorted(np.cumsum(p), u[t], side="right")), 1)
            learner.update(a, float(losses[t, a]))
        hits += all(g == 0 for g in greedy[9:])
    assert hits >= 95


# -- restarts and model selection ------------------------------------------


def test_restarted_exp3_resets_at_block_boundary():
    learner = RestartedExp3(2, T=4)
    assert learner.block == 2
    fresh = Exp3(2, 2).begin_round()
    learner.begin_round()
    learner.update(0, 1.0)
    learner.begin_round()
    learner.update(1, 0.3)
    np.testing.assert_array_equal(learner.begin_round(), fresh)


def test_restarted_exp3_single_block_is_exp3():
    a = RestartedExp3(2, T=1)
    b = Exp3(2, 1)
    np.testing.assert_array_equal(a.begin_round(), b.begin_round())


def _lstar_seq():
    # Π1 = {always 0}; Π2 adds {always 1}
    return PolicyClassSequence(K=2, tables=np.array([[0], [1]]), classes=({0}, {0, 1}))


def test_lstar_rejects_bad_lstar():
    with pytest.raises(ValueError):
        LStarTestSelector(_lstar_seq(), 1.5, 10)


def test_lstar_no_advance_matches_base():
    T = 500
    rng = np.random.default_rng(0)
    losses = rng.random((T, 2)) * 0.1
    losses[:, 1] = 1.0
    u = rng.random(T)
    sel = LStarTestSelector(_lstar_seq(), 0.05, T)
    base = Exp4(_lstar_seq().truncate(1), T)
    np.testing.assert_allclose(drive(sel, losses, u), drive(base, losses, u), atol=0)
    assert sel.m == 1 and sel.switch_rounds == []


def test_lstar_fires_on_deterministic_gap():
    # Π1's only policy loses L★ + 0.5 per round: threshold arithmetic says the
    # first crossing happens once 4 sqrt(2 log T / t) + sqrt(log 2T / t) < 0.5
    T = 4000
    losses = np.tile([0.5, 0.0], (T, 1))
    sel = LStarTestSelector(_lstar_seq(), 0.0, T)
    drive(sel, losses, np.zeros(T))
    need = (4 * math.sqrt(2 * math.log(T)) + math.sqrt(math.log(2 * T))) ** 2 / 0.25
    assert sel.m == 2
    assert sel.switch_rounds == [math.floor(need) + 1]
    assert sel.switch_rounds[0] <= 200 * math.log(T)


def test_lstar_never_exceeds_M():
    T = 3000
    sel = LStarTestSelector(_lstar_seq(), 0.0, T, c1=0.01, c2=0.01)
    drive(sel, np.ones((T, 2)), np.random.default_rng(1).random(T))
    assert sel.m == 2 and len(sel.switch_rounds) == 1


# -- reduction -------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_bandit_from_hedge_equals_exp3(seed):
    K, T = 3, 300
    exp3 = Exp3(K, T)
    seq = constant_action_sequence(K)
    red = bandit_from_fullinfo(Hedge(seq, T, eta=exp3.eta), seq, exp3.gamma)
    rng = np.random.default_rng(seed)
    losses, u = rng.random((T, K)), rng.random(T)
    np.testing.assert_allclose(drive(red, losses, u), drive(exp3, losses, u), rtol=0, atol=1e-9)


def test_bandit_from_fullinfo_gamma_one_is_uniform():
    seq = constant_action_sequence(4)
    red = bandit_from_fullinfo(Hedge(seq, 10), seq, 1.0)
    rng = np.random.default_rng(0)
    for p in drive(red, rng.random((10, 4)), rng.random(10)):
        np.testing.assert_allclose(p, 0.25)


def test_bandit_from_fullinfo_estimate_support():
    seq = constant_action_sequence(3)
    red = bandit_from_fullinfo(Hedge(seq, 10), seq, 0.3)
    red.begin_round(0)
    red.update(1, 0.7)
    est = red.last_estimate
    assert est[0] == 0 and est[2] == 0 and est[1] > 0


# -- shared contract -------------------------------------------------------


def _all_learners(seq, T):
    specs = [
        {"name": "exp4"},
        {"name": "exp4", "prior": "nested"},
        {"name": "epsilon_greedy"},
        {"name": "bandit_from_fullinfo"},
        {"name": "lstar_test"},
        {"name": "exp3"},
        {"name": "restarted_exp3"},
    ]
    return [build_learner(s, seq, T, L_star=0.2) for s in specs]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_distributions_valid_and_floored(seed):
    rng = np.random.default_rng(seed)
    K, N_x, n, T = 3, 4, 9, 60
    tables = rng.integers(0, K, (n, N_x))
    seq = PolicyClassSequence(K=K, tables=tables, classes=(set(range(3)), set(range(n))))
    losses, u, ctx = rng.random((T, K)), rng.random(T), rng.integers(0, N_x, T)
    for learner in _all_learners(seq, T):
        for t in range(T):
            x = int(ctx[t]) if hasattr(learner, "seq") else 0
            p = learner.begin_round(x)
            assert abs(p.sum() - 1) <= 1e-9
            assert p.min() >= learner.floor - 1e-12
            a = min(int(np.searchsorted(np.cumsum(p), u[t], side="right")), K - 1)
            learner.update(a, float(losses[t, a]))


def test_build_learner_unknown_and_lstar_without_truth():
    seq = constant_action_sequence(2)
    with pytest.raises(ValueError):
        build_learner({"name": "nope"}, seq, 10)
    with pytest.raises(ValueError):
        build_learner({"name": "lstar_test"}, seq, 10)


def test_build_learner_prior_bias():
    learner = build_learner({"name": "exp3", "prior_bias": 9.0, "gamma": 0.0}, constant_action_sequence(2), 10)
    np.testing.assert_allclose(learner.distribution(), [0.9, 0.1])
