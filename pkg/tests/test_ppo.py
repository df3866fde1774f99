import numpy as np
import pytest

from gridlight import autodiff as ad
from gridlight.agent import NetConfig, entropy as policy_entropy, forward, init_network
from gridlight.env import DemandSpec, TrafficEnv
from gridlight.optim import AdamState
from gridlight.ppo import (
    RewardNormalizer, RolloutBatch, TrainConfig, add_advantages, collect_rollouts,
    compute_gae, entropy_bonus, policy_loss, ppo_update, total_objective, train,
    value_loss,
)


def gae_bruteforce(rewards, values, dones, gamma, lam):
    """Literal truncated double sum: independent oracle for the recursion."""
    t_len = len(rewards)
    adv = np.zeros(t_len)
    for t in range(t_len):
        coef = 1.0
        total = 0.0
        for k in range(t, t_len):
            nonterm = 1.0 - float(dones[k])
            delta = rewards[k] + gamma * values[k + 1] * nonterm - values[k]
            total += coef * delta
            if dones[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv


def random_episode_arrays(rng, t_max=16):
    t_len = int(rng.integers(1, t_max + 1))
    rewards = rng.normal(size=t_len)
    values = rng.normal(size=t_len + 1)
    dones = rng.random(t_len) < 0.15
    return rewards, values, dones


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_gae_recursion_matches_bruteforce(lam):
    rng = np.random.default_rng(0)
    for _ in range(100):
        rewards, values, dones = random_episode_arrays(rng)
        adv, ret = compute_gae(rewards, values, dones, 0.99, lam)
        expected = gae_bruteforce(rewards, values, dones, 0.99, lam)
        np.testing.assert_allclose(adv, expected, atol=1e-10)
        np.testing.assert_allclose(ret, expected + values[:-1], atol=1e-10)


def test_gae_lambda_zero_is_one_step_delta():
    rng = np.random.default_rng(1)
    rewards, values, dones = random_episode_arrays(rng)
    adv, _ = compute_gae(rewards, values, dones, 0.99, 0.0)
    nonterm = 1.0 - dones.astype(float)
    delta = rewards + 0.99 * values[1:] * nonterm - values[:-1]
    np.testing.assert_allclose(adv, delta, atol=1e-12)


def test_gae_lambda_one_zero_values_is_discounted_return():
    rng = np.random.default_rng(2)
    rewards = rng.normal(size=10)
    values = np.zeros(11)
    dones = np.zeros(10, dtype=bool)
    adv, _ = compute_gae(rewards, values, dones, 0.9, 1.0)
    expected = np.array([sum(0.9 ** k * rewards[t + k] for k in range(10 - t))
                         for t in range(10)])
    np.testing.assert_allclose(adv, expected, atol=1e-10)


def test_gae_length_mismatch_is_hard_error():
    with pytest.raises(ValueError):
        compute_gae(np.zeros(5), np.zeros(5), np.zeros(5), 0.99, 0.95)
    with pytest.raises(ValueError):
        compute_gae(np.zeros(5), np.zeros(6), np.zeros(4), 0.99, 0.95)


def test_policy_loss_ratio_one():
    rng = np.random.default_rng(3)
    logp = rng.normal(size=6)
    adv = rng.normal(size=6)
    loss = policy_loss(ad.constant(logp), logp, adv, eps=0.1)
    assert loss.item() == pytest.approx(-adv.mean(), abs=1e-12)


def _policy_grad_for(ratio_target, advantage, eps=0.1):
    # one intersection, two actions; gradient taken w.r.t. the logits
    logits = ad.Tensor(np.array([[0.3, -0.2]]), requires_grad=True)
    with ad.Tape() as tape:
        logp = ad.log_softmax_rows(logits)
        logp_new = ad.stack([ad.ssum(ad.gather_rows(logp, np.array([0])))])
        logp_old = logp_new.data - np.log(ratio_target)
        loss = policy_loss(logp_new, logp_old, np.array([advantage]), eps)
        tape.backward(loss)
    return logits.grad


def test_clip_saturation_zero_gradient():
    g = _policy_grad_for(ratio_target=1.3, advantage=2.0)
    assert np.all(g == 0.0)
    g = _policy_grad_for(ratio_target=0.7, advantage=-2.0)
    assert np.all(g == 0.0)


def test_unsaturated_samples_have_gradient():
    g = _policy_grad_for(ratio_target=1.05, advantage=2.0)
    assert np.any(g != 0.0)
    g = _policy_grad_for(ratio_target=0.95, advantage=-2.0)
    assert np.any(g != 0.0)


def test_value_loss_examples():
    eps = 0.2
    # new == old == return: zero loss
    v = np.array([1.0, -2.0])
    assert value_loss(ad.constant(v), v, v, eps).item() == 0.0
    # v_new - v_old = 2 eps with v_old = R: average of (2eps)^2 and eps^2
    v_old = np.array([1.0])
    v_new = ad.constant(v_old + 2 * eps)
    loss = value_loss(v_new, v_old, v_old, eps)
    assert loss.item() == pytest.approx(2.5 * eps ** 2, abs=1e-12)
    # huge eps: plain squared error
    rng = np.random.default_rng(4)
    vn, vo, r = rng.normal(size=3 * 8).reshape(3, 8)
    loss = value_loss(ad.constant(vn), vo, r, eps=1e9)
    assert loss.item() == pytest.approx(np.mean((vn - r) ** 2), abs=1e-12)


def test_total_objective_coefficients():
    pl = ad.Tensor(1.5, requires_grad=True)
    vl = ad.Tensor(2.0, requires_grad=True)
    ent = ad.Tensor(0.5, requires_grad=True)
    with ad.Tape() as tape:
        loss = total_objective(pl, vl, ent, c1=1.0, c2=0.01)
        tape.backward(loss)
    assert loss.item() == pytest.approx(1.5 + 2.0 - 0.01 * 0.5)
    assert float(ent.grad) == pytest.approx(-0.01)

    pl = ad.Tensor(1.5, requires_grad=True)
    vl = ad.Tensor(2.0, requires_grad=True)
    ent = ad.Tensor(0.5, requires_grad=True)
    with ad.Tape() as tape:
        loss = total_objective(pl, vl, ent, c1=0.0, c2=0.0)
        tape.backward(loss)
    assert vl.grad is None or float(vl.grad) == 0.0
    assert ent.grad is None or float(ent.grad) == 0.0


def test_entropy_bonus_uniform():
    logp = ad.constant(np.log(np.full((3, 4, 2), 0.5)))
    assert entropy_bonus(logp).item() == pytest.approx(4 * np.log(2))


def test_reward_normalizer_constant_stream():
    norm = RewardNormalizer()
    outs = [norm.normalize(5.0) for _ in range(50)]
    assert outs[0] == 0.0
    assert all(abs(x) < 1e-9 for x in outs)


def test_reward_normalizer_alternating_stream():
    norm = RewardNormalizer()
    outs = [norm.normalize(1.0 if i % 2 == 0 else -1.0) for i in range(10_000)]
    assert norm.std == pytest.approx(1.0, abs=1e-3)
    assert abs(outs[-1]) == pytest.approx(1.0, abs=1e-2)


def test_reward_normalizer_roundtrip():
    norm = RewardNormalizer()
    for x in (1.0, 2.0, -3.0):
        norm.normalize(x)
    clone = RewardNormalizer.from_state(norm.state())
    assert clone.normalize(0.5) == norm.normalize(0.5)


def tiny_env_factory(seed_base=100, episode_len=16):
    def factory(i):
        return TrafficEnv(1, 1, episode_len, DemandSpec((3600.0,), (5,)),
                          seed=seed_base + i, arm_length=100.0)
    return factory


def tiny_net_config():
    return NetConfig(rows=1, cols=1, trunk_channels=(4,), head_hidden=8)


def tiny_train_config(**kw):
    defaults = dict(horizon=8, actors=2, epochs=2, minibatch=8, episodes=2,
                    lr0=1e-3, seed=7, episode_len=16)
    defaults.update(kw)
    return TrainConfig(**defaults)


def make_collected_batch(seed=0, t_steps=8, n_envs=2):
    factory = tiny_env_factory()
    envs = [factory(i) for i in range(n_envs)]
    for env in envs:
        env.reset()
    params = init_network(tiny_net_config(), seed=seed)
    rngs = [np.random.default_rng(seed + 50 + i) for i in range(n_envs)]
    batch = collect_rollouts(envs, params, t_steps, RewardNormalizer(),
                             RewardNormalizer(), beta=0.5, action_rngs=rngs)
    return params, batch


def test_collect_shapes_and_episode_rollover():
    factory = tiny_env_factory()
    envs = [factory(i) for i in range(2)]
    for env in envs:
        env.reset()
    params = init_network(tiny_net_config(), seed=0)
    rngs = [np.random.default_rng(50 + i) for i in range(2)]
    norm_h, norm_l = RewardNormalizer(), RewardNormalizer()
    first = collect_rollouts(envs, params, 8, norm_h, norm_l, 0.5, rngs)
    assert first.states.shape[:2] == (2, 8)
    assert first.n_samples == 16
    assert first.actions.shape == (2, 8, 1)
    assert first.values_global.shape == (2, 9)
    assert not first.dones.any()  # 16-step episodes outlast an 8-step horizon
    second = collect_rollouts(envs, params, 8, norm_h, norm_l, 0.5, rngs)
    assert second.dones[:, -1].all()  # episode ends on the last collected step
    assert second.dones.sum() == 2
    assert all(env.t == 0 for env in envs)  # auto-reset after the terminal step


def test_collect_is_deterministic():
    _, a = make_collected_batch(seed=3)
    _, b = make_collected_batch(seed=3)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.logp_old, b.logp_old)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_update_leaves_logp_old_untouched():
    params, batch = make_collected_batch()
    add_advantages(batch, 0.99, 0.95)
    before = batch.logp_old.copy()
    cfg = tiny_train_config()
    adam = AdamState.for_params(params.tensors)
    ppo_update(params, batch, cfg, adam, lr=1e-3, eps=0.1,
               shuffle_rng=np.random.default_rng(0))
    np.testing.assert_array_equal(batch.logp_old, before)


def test_train_runs_and_is_reproducible(tmp_path):
    cfg = tiny_train_config()
    net_cfg = tiny_net_config()
    params_a, logs_a = train(cfg, net_cfg, tiny_env_factory())
    params_b, logs_b = train(cfg, net_cfg, tiny_env_factory())
    assert len(logs_a) == cfg.episodes
    assert set(logs_a[0]) == {"episode", "mean_net_outflow", "policy_loss",
                              "value_loss", "entropy", "lr", "epsilon", "beta"}
    for k in params_a.tensors:
        np.testing.assert_array_equal(params_a.tensors[k].data, params_b.tensors[k].data)
    assert logs_a == logs_b


def test_train_schedules():
    cfg = tiny_train_config(episodes=4, reward_mode="hybrid")
    _, logs = train(cfg, tiny_net_config(), tiny_env_factory())
    lrs = [row["lr"] for row in logs]
    assert lrs[0] == cfg.lr0
    assert all(b < a for a, b in zip(lrs, lrs[1:]))
    betas = [row["beta"] for row in logs]
    assert betas[0] == 0.0 and betas[-1] == 1.0
    assert all(b >= a for a, b in zip(betas, betas[1:]))

    cfg = tiny_train_config(episodes=3, reward_mode="global")
    _, logs = train(cfg, tiny_net_config(), tiny_env_factory())
    assert all(row["beta"] == 1.0 for row in logs)


def test_train_checkpoint_and_resume(tmp_path):
    cfg = tiny_train_config(episodes=3)
    out = tmp_path / "run"
    train(cfg, tiny_net_config(), tiny_env_factory(), out_dir=out)
    assert (out / "checkpoint_ep002.ck").exists()
    assert (out / "training_log.csv").exists()
    from gridlight.agent import load_params
    _, _, manifest = load_params(out / "checkpoint_latest.ck")
    assert manifest["episode"] == 2

    # resuming continues the episode counter
    cfg_more = tiny_train_config(episodes=5)
    _, logs = train(cfg_more, tiny_net_config(), tiny_env_factory(),
                    out_dir=out, resume=out / "checkpoint_latest.ck")
    assert [row["episode"] for row in logs] == [3, 4]


class _StubEnv:
    """Constant-reward environment with a fixed observation."""

    def __init__(self, shape, seed):
        self.state = np.random.default_rng(seed).random(shape)
        self._t = 0

    def reset(self):
        self._t = 0
        return self.state

    def step(self, commands):
        from gridlight.env import EnvStep
        self._t += 1
        return EnvStep(self.state, 0.0, np.zeros(1), self._t >= 64, None, None)


def test_entropy_bonus_pushes_toward_uniform_policy():
    net_cfg = tiny_net_config()
    params = init_network(net_cfg, seed=0)
    params.tensors["actor.fc2.b"].data[:] = np.array([2.5, -2.5])  # biased start
    envs = [_StubEnv(net_cfg.input_shape, seed=i) for i in range(2)]
    for env in envs:
        env.reset()
    state = envs[0].state
    assert policy_entropy(forward(params, state).policy) < 0.3

    cfg = TrainConfig(horizon=8, actors=2, epochs=2, minibatch=16, episodes=1,
                      lr0=5e-3, c2=1.0, seed=1, episode_len=64)
    adam = AdamState.for_params(params.tensors)
    rngs = [np.random.default_rng(10 + i) for i in range(2)]
    shuffle = np.random.default_rng(2)
    hybrid_norm, local_norm = RewardNormalizer(), RewardNormalizer()
    for _ in range(40):
        batch = collect_rollouts(envs, params, 8, hybrid_norm, local_norm, 0.5, rngs)
        add_advantages(batch, cfg.gamma, cfg.lam)
        ppo_update(params, batch, cfg, adam, lr=cfg.lr0, eps=0.1, shuffle_rng=shuffle)
    assert policy_entropy(forward(params, state).policy) > 0.6  # ln 2 is 0.693
