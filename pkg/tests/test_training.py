import math

import numpy as np
import pytest

from edgeorch import autodiff as ad
from edgeorch.env import OrchestrationEnv, RewardConfig
from edgeorch.nnet import ArchSpec, init_policy_params, policy_distribution
from edgeorch.scenario import build_scenario, desk_preset, generate_scenario
from edgeorch.training import (
    HighReturnBuffer,
    Hyperparams,
    ReplayBuffer,
    Transition,
    build_high_return_buffer,
    collect_rollout,
    compute_gae,
    discounted_returns,
    greedy_rollout,
    ppo_losses,
    sil_losses,
    train,
)

from conftest import full_mesh, make_micro, make_request
from edgeorch.model import Scenario
from test_nnet import TOY_ARCH, toy_state


def desk_scenario(seed=0):
    return build_scenario(generate_scenario(desk_preset(), seed=seed))


def fast_hp(**kw):
    base = dict(
        lr_actor=1e-3, lr_critic=3e-3, batch_size=32, mini_batch_size=8, k_epochs=2,
        determining_sample_freq=5,
    )
    base.update(kw)
    return Hyperparams(**base)


def make_transition(rng, reward=1.0, done=False, action=None):
    state = toy_state(rng)
    act = action if action is not None else int(np.flatnonzero(state.avail_mask)[0])
    nxt = None if done else toy_state(rng)
    return Transition(state, act, reward, nxt, log_prob_old=-1.0, done=done)


# ---------------------------------------------------------------------------
# Buffers


def test_replay_buffer_episode_alignment(rng):
    buf = ReplayBuffer()
    ep1 = [make_transition(rng), make_transition(rng, done=True)]
    ep2 = [make_transition(rng, done=True)]
    buf.store_episode(ep1)
    buf.store_episode(ep2)
    assert buf.count == 3
    assert [len(t) for t in buf.trajectories()] == [2, 1]
    buf.clear()
    assert buf.count == 0


def test_discounted_returns():
    assert discounted_returns([0.0, 5.0], 1.0) == [5.0, 5.0]
    out = discounted_returns([1.0, -2.0], 0.9)
    assert out[1] == pytest.approx(-2.0)
    assert out[0] == pytest.approx(1.0 + 0.9 * -2.0)


def test_high_return_buffer_first_admission(rng):
    hr = HighReturnBuffer()
    traj = [make_transition(rng, reward=0.0), make_transition(rng, reward=5.0, done=True)]
    assert hr.consider(traj, gamma=1.0, xi=0.8)
    assert len(hr) == 2  # G = [5, 5], both positive
    assert hr.max_total_return == 10.0
    assert all(s.return_ > 0 for s in hr.items)


def test_high_return_buffer_rejects_negative(rng):
    hr = HighReturnBuffer()
    neg = [make_transition(rng, reward=-1.0, done=True)]
    assert not hr.consider(neg, gamma=0.9, xi=0.8)
    assert len(hr) == 0 and hr.max_total_return == 0.0
    good = [make_transition(rng, reward=3.0, done=True)]
    hr.consider(good, gamma=0.9, xi=0.8)
    mixed = [make_transition(rng, reward=1.0), make_transition(rng, reward=-2.0, done=True)]
    # G = [-0.8, -2.0], total -2.8 < 0.8 * 3.0 -> rejected
    assert not hr.consider(mixed, gamma=0.9, xi=0.8)
    assert hr.max_total_return == 3.0


def test_high_return_buffer_monotone_max(rng):
    hr = HighReturnBuffer()
    for reward in [2.0, 1.0, 5.0, 0.5, 7.0]:
        hr.consider([make_transition(rng, reward=reward, done=True)], 1.0, 0.8)
    assert hr.max_history == sorted(hr.max_history)
    assert all(s.return_ > 0 for s in hr.items)


def test_build_high_return_buffer_persists_max(rng):
    buf = ReplayBuffer()
    buf.store_episode([make_transition(rng, reward=4.0, done=True)])
    hp = Hyperparams()
    hr = build_high_return_buffer(buf, hp)
    assert hr.max_total_return == 4.0
    buf.clear()
    buf.store_episode([make_transition(rng, reward=1.0, done=True)])
    hr2 = build_high_return_buffer(buf, hp, hr)
    assert hr2 is hr and hr.max_total_return == 4.0  # 1.0 < 0.8 * 4.0 rejected


# ---------------------------------------------------------------------------
# GAE


def test_gae_collapses_to_td_error(rng):
    traj = [make_transition(rng, reward=1.0), make_transition(rng, reward=2.0, done=True)]
    values = {id(t.state): 0.5 * (i + 1) for i, t in enumerate(traj)}

    def vf(state):
        return values.get(id(state), 0.25)

    adv, targets = compute_gae(traj, vf, gamma=0.9, gae_lambda=0.0)
    t0 = 1.0 + 0.9 * vf(traj[0].next_state)
    assert targets[0] == pytest.approx(t0)
    assert targets[1] == pytest.approx(2.0)  # terminal V = 0
    assert adv[0] == pytest.approx(t0 - 0.5)
    assert adv[1] == pytest.approx(2.0 - 1.0)


def test_gae_gamma_zero(rng):
    traj = [make_transition(rng, reward=3.0), make_transition(rng, reward=-1.0, done=True)]
    adv, targets = compute_gae(traj, lambda s: 0.0, gamma=0.0, gae_lambda=0.95)
    np.testing.assert_allclose(targets, [3.0, -1.0])
    np.testing.assert_allclose(adv, [3.0, -1.0])


def test_gae_matches_double_sum(rng):
    traj = [make_transition(rng, reward=float(r)) for r in rng.normal(size=5)]
    traj[-1] = make_transition(rng, reward=1.0, done=True)
    vals = {}

    def vf(state):
        return vals.setdefault(id(state), float(rng.normal()))

    gamma, lam = 0.9, 0.95
    adv, targets = compute_gae(traj, vf, gamma, lam)
    # brute-force expansion of the exponentially weighted delta sum
    deltas = []
    for i, t in enumerate(traj):
        nv = 0.0 if (t.done or t.next_state is None) else vf(t.next_state)
        deltas.append(t.reward + gamma * nv - vf(t.state))
    for t0 in range(5):
        expect = sum((gamma * lam) ** (i - t0) * deltas[i] for i in range(t0, 5))
        assert adv[t0] == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------------------
# Losses


def test_ppo_clip_inactive_when_policies_equal(rng):
    store = init_policy_params(TOY_ARCH, seed=0)
    state = toy_state(rng)
    action = int(np.flatnonzero(state.avail_mask)[0])
    _, logp = policy_distribution(state, store, TOY_ARCH)
    tr = Transition(state, action, 1.0, None, float(logp.data[action]), True)
    hp = Hyperparams(entropy_weight=0.0)
    a_loss, _ = ppo_losses([(tr, 2.0, 0.0)], store, TOY_ARCH, hp)
    assert a_loss.item() == pytest.approx(-2.0, abs=1e-9)  # ratio 1, surrogate = adv


def test_ppo_clip_bounds_positive_advantage(rng):
    store = init_policy_params(TOY_ARCH, seed=1)
    state = toy_state(rng)
    action = int(np.flatnonzero(state.avail_mask)[0])
    _, logp = policy_distribution(state, store, TOY_ARCH)
    # pretend the behavior policy had much lower probability -> ratio >> 1+eps
    tr = Transition(state, action, 1.0, None, float(logp.data[action]) - 1.0, True)
    hp = Hyperparams(entropy_weight=0.0, clip_eps=0.2)
    a_loss, _ = ppo_losses([(tr, 1.0, 0.0)], store, TOY_ARCH, hp)
    assert a_loss.item() == pytest.approx(-1.2, abs=1e-9)  # clipped at 1 + eps


def test_entropy_value_uniform():
    store = init_policy_params(TOY_ARCH, seed=2)
    store["actor.head.w"].data[:] = 0.0
    state = toy_state(np.random.default_rng(3))
    state.avail_mask[:] = 1.0
    probs, logp = policy_distribution(state, store, TOY_ARCH)
    entropy = -float(np.sum(probs.data * logp.data))
    assert entropy == pytest.approx(math.log(3), abs=1e-9)


def test_sil_losses_rectifier(rng):
    store = init_policy_params(TOY_ARCH, seed=3)
    state = toy_state(rng)
    action = int(np.flatnonzero(state.avail_mask)[0])
    from edgeorch.training import SilSample
    from edgeorch.nnet import state_value

    v = state_value(state, store, TOY_ARCH).item()
    below = SilSample(state, action, v - 1.0, None)  # G - V = -1 -> no contribution
    a0, c0 = sil_losses([below], store, TOY_ARCH)
    assert a0.item() == 0.0 and c0.item() == 0.0
    above = SilSample(state, action, v + 2.0, None)
    a1, c1 = sil_losses([above], store, TOY_ARCH)
    _, logp = policy_distribution(state, store, TOY_ARCH)
    assert a1.item() == pytest.approx(-float(logp.data[action]) * 2.0, rel=1e-9)
    assert c1.item() == pytest.approx(0.5 * 4.0, rel=1e-9)
    empty_a, empty_c = sil_losses([], store, TOY_ARCH)
    assert empty_a.item() == 0.0 and empty_c.item() == 0.0


# ---------------------------------------------------------------------------
# Rollouts and training


def test_collect_rollout_lengths_and_determinism():
    scenario = desk_scenario(seed=1)
    env = OrchestrationEnv(scenario, reward=RewardConfig(t_penalty=1e4))
    arch = ArchSpec(n_servers=scenario.n_servers, n_services=scenario.n_services,
                    hidden=8, heads=2, vec_embed=4, trunk=16)
    store = init_policy_params(arch, seed=0)
    hp = fast_hp()
    greedy1 = collect_rollout(env, store, arch, 0, hp, np.random.default_rng(0))
    greedy2 = collect_rollout(env, store, arch, 0, hp, np.random.default_rng(99))
    assert [t.action for t in greedy1] == [t.action for t in greedy2]  # greedy ignores rng
    assert len(greedy1) == env.total_steps
    s1 = collect_rollout(env, store, arch, 1, hp, np.random.default_rng(5))
    s2 = collect_rollout(env, store, arch, 1, hp, np.random.default_rng(5))
    assert [t.action for t in s1] == [t.action for t in s2]
    assert len(s1) == env.total_steps
    assert all(math.isfinite(t.log_prob_old) for t in s1)


def test_ratio_one_after_sync():
    scenario = desk_scenario(seed=2)
    arch = ArchSpec(n_servers=scenario.n_servers, n_services=scenario.n_services,
                    hidden=8, heads=2, vec_embed=4, trunk=16)
    hp = fast_hp(batch_size=16, mini_batch_size=4, k_epochs=1)
    result = train(scenario, hp, seed=0, episodes=6, reward=RewardConfig(t_penalty=1e4))
    env = OrchestrationEnv(scenario, reward=RewardConfig(t_penalty=1e4))
    store = result.params
    rollout = collect_rollout(env, store, result.arch, 1, hp, np.random.default_rng(1))
    for tr in rollout[:3]:
        _, logp = policy_distribution(tr.state, store, result.arch)
        ratio = math.exp(float(logp.data[tr.action]) - tr.log_prob_old)
        assert ratio == pytest.approx(1.0, abs=1e-9)


def test_train_zero_lr_keeps_params():
    scenario = desk_scenario(seed=3)
    hp = fast_hp(lr_actor=0.0, lr_critic=0.0, batch_size=8, mini_batch_size=4, k_epochs=1)
    arch = ArchSpec(n_servers=scenario.n_servers, n_services=scenario.n_services,
                    hidden=8, heads=2, vec_embed=4, trunk=16)
    result = train(scenario, hp, seed=1, episodes=3,
                   reward=RewardConfig(t_penalty=1e4), arch=arch)
    fresh = init_policy_params(arch, seed=np.random.SeedSequence(1).spawn(3)[0])
    for name, tensor in result.params.items():
        np.testing.assert_array_equal(tensor.data, fresh[name].data)
    assert len(result.log_rows) == 3
    assert all("total_delay" in row for row in result.log_rows)


def test_train_log_deterministic_modulo_wallclock(tmp_path):
    scenario = desk_scenario(seed=4)
    hp = fast_hp(batch_size=16, mini_batch_size=8, k_epochs=1)
    kw = dict(reward=RewardConfig(t_penalty=1e4))
    arch = ArchSpec(n_servers=4, n_services=4, hidden=8, heads=2, vec_embed=4, trunk=16)
    r1 = train(scenario, hp, seed=7, episodes=5, arch=arch, **kw)
    r2 = train(scenario, hp, seed=7, episodes=5, arch=arch, **kw)
    for a, b in zip(r1.log_rows, r2.log_rows):
        for key in ["episode", "total_delay", "episode_return", "A_loss", "C_loss"]:
            assert a[key] == b[key]


def test_greedy_rollout_returns_valid_plan():
    scenario = desk_scenario(seed=5)
    arch = ArchSpec(n_servers=4, n_services=4, hidden=8, heads=2, vec_embed=4, trunk=16)
    store = init_policy_params(arch, seed=0)
    env = OrchestrationEnv(scenario, reward=RewardConfig(t_penalty=1e4))
    plan, total = greedy_rollout(env, store, arch)
    from edgeorch.model import validate_plan

    assert validate_plan(plan, scenario.topology, scenario.services).feasible
    assert plan.counts.sum() == env.total_steps
    assert total > 0


def test_training_reduces_delay_on_tiny_scenario():
    """Sanity: a few updates shift the greedy rollout below the initial one."""
    scenario = desk_scenario(seed=6)
    arch = ArchSpec(n_servers=4, n_services=4, hidden=16, heads=2, vec_embed=8, trunk=32)
    reward = RewardConfig(t_penalty=1e3)
    env = OrchestrationEnv(scenario, reward=reward)
    store0 = init_policy_params(arch, seed=np.random.SeedSequence(11).spawn(3)[0])
    _, before = greedy_rollout(env, store0, arch)
    hp = fast_hp(batch_size=64, mini_batch_size=16, k_epochs=3)
    result = train(scenario, hp, seed=11, episodes=60, reward=reward, arch=arch)
    env2 = OrchestrationEnv(scenario, reward=reward)
    _, after = greedy_rollout(env2, result.params, arch)
    assert after <= before
