import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arrl.envs import build_random_mdp
from arrl.evaluation import sandwich_audit
from arrl.mdp import TabularMDP, make_rng
from arrl.runlog import LearnerConfig
from arrl.ucbh import ARUCBH, alpha_weights, hoeffding_bonus, learning_rate, ucbh_run


def test_learning_rate_examples():
    for H in (1, 3, 10):
        assert learning_rate(1, H) == 1.0
        assert learning_rate(H + 2, H) == pytest.approx(0.5)
    assert learning_rate(7, 3) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        learning_rate(0, 3)


def test_hoeffding_bonus_examples():
    assert hoeffding_bonus(1, 1, 1.0) == 1.0
    assert hoeffding_bonus(4, 2, 2.0) == pytest.approx(2.0)
    assert hoeffding_bonus(40, 3, 1.7) == pytest.approx(hoeffding_bonus(10, 3, 1.7) / 2)


@pytest.mark.parametrize("H", [1, 2, 5])
def test_weight_identities(H):
    for t in range(1, 101):
        w = alpha_weights(t, H)
        assert len(w) == t + 1
        assert abs(w[0]) < 1e-9
        assert abs(w[1:].sum() - 1.0) < 1e-9
        assert (w[1:] ** 2).sum() <= 2 * H / t + 1e-9
        bonus_weighted = (w[1:] / np.sqrt(np.arange(1, t + 1))).sum()
        assert 1 / math.sqrt(t) - 1e-9 <= bonus_weighted <= 2 / math.sqrt(t) + 1e-9


@given(st.integers(1, 60), st.integers(1, 8))
def test_weights_match_product_form(t, H):
    a = [learning_rate(j, H) for j in range(1, t + 1)]
    w = alpha_weights(t, H)
    assert w[0] == pytest.approx(np.prod([1 - x for x in a]), abs=1e-12)
    for i in range(1, t + 1):
        assert w[i] == pytest.approx(a[i - 1] * np.prod([1 - x for x in a[i:]]), abs=1e-12)


def test_first_visit_erases_initialization():
    L = ARUCBH(2, 2, 3, LearnerConfig(10), clamp=False)
    L.Q_bar[1, 0, 1] = 123.0
    L.V_bar[2, 1] = 0.7
    L.step_update(1, 0, 1, 0.4, 1)
    assert L.Q_bar[1, 0, 1] == pytest.approx(0.4 + 0.7 + hoeffding_bonus(1, 3, L.iota), abs=1e-12)


def test_clamped_update_respects_cap():
    L = ARUCBH(2, 2, 3, LearnerConfig(10))
    L.step_update(1, 0, 1, 0.4, 1)
    assert L.Q_bar[1, 0, 1] == 2.0 and L.Q_under[1, 0, 1] == 0.0


def test_unrolled_single_state_recursion():
    L = ARUCBH(1, 1, 1, LearnerConfig(10), clamp=False)
    L.iota = 1.0
    for t in range(1, 201):
        L.step_update(0, 0, 0, 1.0, 0)
        L.policy_freeze(0, 0)
        w = alpha_weights(t, 1)
        unrolled = 1.0 + sum(w[i] * hoeffding_bonus(i, 1, 1.0) for i in range(1, t + 1))
        assert L.Q_bar[0, 0, 0] == pytest.approx(unrolled, abs=1e-12)
        assert 1 + math.sqrt(1 / t) - 1e-12 <= L.Q_bar[0, 0, 0] <= 1 + 2 * math.sqrt(1 / t) + 1e-12


def test_reward_range_checked():
    with pytest.raises(ValueError):
        ARUCBH(1, 1, 1, LearnerConfig(1)).step_update(0, 0, 0, -0.1, 0)


def _freeze_setup(v_under):
    L = ARUCBH(1, 2, 1, LearnerConfig(10, rho=0.0))
    L.iota = 100.0
    L.Q_bar[0, 0] = [0.5, 1.0]
    L.Q_under[0, 0] = [0.5, 0.0]
    L.V_under[0, 0] = v_under
    L.pi_bar[0, 0] = 0
    L.step_update(0, 0, 1, 1.0, 0)
    assert L.pi_bar[0, 0] == 1  # candidate before the freeze rule
    return L


def test_freeze_reverts_when_lower_value_kept():
    L = _freeze_setup(0.5)
    assert L.policy_freeze(0, 0) is True
    assert L.pi_bar[0, 0] == 0 and L.freezes == 1


def test_no_freeze_when_candidate_attains_lower_value():
    L = _freeze_setup(0.0)
    assert L.policy_freeze(0, 0) is False
    assert L.pi_bar[0, 0] == 1


def test_monotone_values_every_step():
    base = build_random_mdp(3, 2, 4, seed=3)
    mdp = TabularMDP(base.P, base.R, reward_noise="bernoulli")
    L = ARUCBH(3, 2, 4, LearnerConfig(300, rho=0.3))
    act, env = np.random.default_rng(0), np.random.default_rng(1)
    for _ in range(300):
        vb, vu = L.V_bar.copy(), L.V_under.copy()
        _, (lo, hi) = L.run_episode(mdp, act, env)
        assert np.all(L.V_bar <= vb) and np.all(L.V_under >= vu)
        assert lo <= hi
        caps = (4 - np.arange(4))[:, None, None]
        assert np.all(L.Q_bar <= caps) and np.all(L.Q_under >= 0)
        assert np.all(L.V_bar[4] == 0) and np.all(L.V_under[4] == 0)
    assert L.violations == 0


@pytest.mark.parametrize("clamp", [True, False])
def test_stepwise_and_batched_paths_agree(clamp):
    mdp = build_random_mdp(4, 3, 3, seed=5)
    cfg = LearnerConfig(250, rho=0.2)
    slow, fast = ARUCBH(4, 3, 3, cfg, clamp), ARUCBH(4, 3, 3, cfg, clamp)
    a1, e1 = make_rng(2, "act"), make_rng(2, "env")
    a2, e2 = make_rng(2, "act"), make_rng(2, "env")
    certs = [slow.run_episode(mdp, a1, e1)[1] for _ in range(250)]
    logs = [fast.run_episodes(mdp, 100, a2, e2), fast.run_episodes(mdp, 150, a2, e2)]
    assert np.array_equal(np.concatenate([l.cert_lo for l in logs]), [c[0] for c in certs])
    assert np.array_equal(np.concatenate([l.cert_hi for l in logs]), [c[1] for c in certs])
    for name in ("N", "Q_bar", "Q_under", "V_bar", "V_under", "pi_bar", "pi_under"):
        assert np.array_equal(getattr(slow, name), getattr(fast, name)), name
    assert (slow.freezes, slow.violations) == (fast.freezes, fast.violations)


def test_single_episode_run():
    mdp = build_random_mdp(3, 2, 4, seed=1)
    log = ucbh_run(mdp, LearnerConfig(1), np.random.default_rng(0))
    assert log.K == 1 and len(log.trajectories[0]) == 4
    assert 0 <= log.epsilon[0] <= 4


def test_reproducible():
    mdp = build_random_mdp(3, 2, 3, seed=2)
    a = ucbh_run(mdp, LearnerConfig(400), make_rng(9, "ucbh"))
    b = ucbh_run(mdp, LearnerConfig(400), make_rng(9, "ucbh"))
    assert np.array_equal(a.cert_hi, b.cert_hi) and np.array_equal(a.pi_out, b.pi_out)
    assert a.extra == b.extra


def test_bandit_learns_better_arm():
    mdp = TabularMDP(np.ones((1, 1, 2, 1)), np.array([[[0.0, 1.0]]]))
    assert ucbh_run(mdp, LearnerConfig(2000, rho=0.0), np.random.default_rng(0)).pi_out.tolist() == [[1]]
    mdp = TabularMDP(np.ones((1, 1, 2, 1)), np.array([[[1.0, 0.0]]]))
    assert ucbh_run(mdp, LearnerConfig(2000, rho=0.0), np.random.default_rng(0)).pi_out.tolist() == [[0]]


def test_width_shrinks_and_sandwich_holds():
    mdp = build_random_mdp(5, 3, 5, seed=0)
    K = 8000
    log = ucbh_run(mdp, LearnerConfig(K, rho=0.2), make_rng(0, "ucbh"))
    assert log.epsilon[K - 1] < log.epsilon[K // 4 - 1]
    assert np.all(np.diff(log.cert_hi) <= 0) and np.all(np.diff(log.cert_lo) >= 0)
    assert sandwich_audit(mdp, 0.2, log, log.policies)[1] <= 0.05
    assert log.monotonicity_violations == 0
