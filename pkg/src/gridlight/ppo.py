"""Clipped-PPO trainer with GAE over synchronous multi-actor rollouts.

Each collection phase runs N environment instances for T steps under the
current policy, recording states, actions, collection-time log-probs,
normalized hybrid rewards, and both critics' values.  Advantages come from
the global critic through the GAE backward recursion; the local critic
trains per intersection against returns built the same way from the local
reward stream.  Updates run K epochs of shuffled minibatches through the
clipped surrogate objective and Adam; learning rate and clip range anneal
linearly to zero over the episode budget, and the global/local reward blend
anneals from local to global.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agent import NetConfig, NetParams, forward, init_network, load_params, sample_actions, save_params
from .autodiff import Tensor
from .optim import AdamState, adam_step, collect_grads
from .rewards import beta_schedule, hybrid_reward


@dataclass
class TrainConfig:
    horizon: int = 64            # T steps collected per actor per iteration
    actors: int = 16             # N parallel environment instances
    epochs: int = 3              # K passes over each collected batch
    minibatch: int = 1024        # must divide actors * horizon
    episodes: int = 50
    gamma: float = 0.99
    lam: float = 0.95
    clip0: float = 0.1           # annealed: eps = clip0 * alpha
    lr0: float = 1e-4            # annealed: lr = lr0 * alpha
    c1: float = 1.0
    c2: float = 0.01
    seed: int = 0
    episode_len: int = 3600
    reward_mode: str = "hybrid"  # "hybrid" anneals beta; "global" pins beta = 1
    update_interval: int | None = None  # overrides horizon as collection length

    @property
    def rollout_len(self) -> int:
        return self.update_interval or self.horizon

    def beta_for_episode(self, episode: int) -> float:
        if self.reward_mode == "global":
            return 1.0
        progress = episode / (self.episodes - 1) if self.episodes > 1 else 1.0
        return beta_schedule(progress)


class RewardNormalizer:
    """Running mean/std over every raw reward seen so far (Welford)."""

    def __init__(self, count: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.count = count
        self.mean = mean
        self.m2 = m2

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.count) if self.count else 0.0

    def normalize(self, raw: float) -> float:
        self.count += 1
        delta = raw - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (raw - self.mean)
        return (raw - self.mean) / max(self.std, 1e-8)

    def state(self) -> np.ndarray:
        return np.array([self.count, self.mean, self.m2])

    @classmethod
    def from_state(cls, arr: np.ndarray) -> "RewardNormalizer":
        return cls(int(arr[0]), float(arr[1]), float(arr[2]))


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    R_t     = A_t + V_t

    ``values`` must include the bootstrap V_{T+1}; done flags cut the
    recursion at episode boundaries.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1:
        raise ValueError(f"values must have length T+1={t_len + 1}, got {values.shape[0]}")
    if dones.shape[0] != t_len:
        raise ValueError(f"dones must have length T={t_len}, got {dones.shape[0]}")
    adv = np.zeros(t_len)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterm = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t]
        acc = delta + gamma * lam * nonterm * acc
        adv[t] = acc
    return adv, adv + values[:-1]


# ------------------------------------------------------------------- losses

def policy_loss(logp_new: Tensor, logp_old: np.ndarray, advantages: np.ndarray,
                eps: float) -> Tensor:
    """Negated clipped surrogate: min(r*A, clip(r, 1-eps, 1+eps)*A), meaned."""
    ratio = ad.exp(ad.sub(logp_new, ad.constant(logp_old)))
    adv = ad.constant(advantages)
    surr = ad.mul(ratio, adv)
    clipped = ad.mul(ad.clip(ratio, 1.0 - eps, 1.0 + eps), adv)
    return ad.neg(ad.mean(ad.minimum(surr, clipped)))


def value_loss(v_new: Tensor, v_old: np.ndarray, returns: np.ndarray, eps: float) -> Tensor:
    """Mean of the elementwise average of clipped and unclipped squared error."""
    old = ad.constant(v_old)
    ret = ad.constant(returns)
    clipped = ad.add(old, ad.clip(ad.sub(v_new, old), -eps, eps))
    unclipped_sq = ad.square(ad.sub(v_new, ret))
    clipped_sq = ad.square(ad.sub(clipped, ret))
    return ad.mean(ad.scale(ad.add(unclipped_sq, clipped_sq), 0.5))


def entropy_bonus(log_policies: Tensor) -> Tensor:
    """Mean per-sample entropy of a stacked (B, n_tls, 2) log-policy tensor."""
    batch = log_policies.shape[0]
    plogp = ad.mul(ad.exp(log_policies), log_policies)
    return ad.neg(ad.scale(ad.ssum(plogp), 1.0 / batch))


def total_objective(pl: Tensor, vl: Tensor, ent: Tensor, c1: float, c2: float) -> Tensor:
    """Loss to minimize: policy term + c1 * value term - c2 * entropy."""
    return ad.add(pl, ad.sub(ad.scale(vl, c1), ad.scale(ent, c2)))


# ------------------------------------------------------------------ rollout

@dataclass
class RolloutBatch:
    """Per-actor, per-step arrays; trajectories are contiguous per actor."""

    states: np.ndarray         # (N, T, C, H, W)
    actions: np.ndarray        # (N, T, n_tls)
    logp_old: np.ndarray       # (N, T)
    rewards: np.ndarray        # (N, T) normalized hybrid
    dones: np.ndarray          # (N, T)
    values_global: np.ndarray  # (N, T+1) incl. bootstrap
    values_local: np.ndarray   # (N, T+1, n_tls)
    local_rewards: np.ndarray  # (N, T, n_tls) normalized local parts
    raw_global: np.ndarray     # (N, T) unnormalized net outflow, for logging
    advantages: np.ndarray | None = None   # (N, T)
    returns: np.ndarray | None = None      # (N, T)
    local_returns: np.ndarray | None = None  # (N, T, n_tls)

    @property
    def n_samples(self) -> int:
        return self.states.shape[0] * self.states.shape[1]


def collect_rollouts(envs, params: NetParams, t_steps: int,
                     hybrid_norm: RewardNormalizer, local_norm: RewardNormalizer,
                     beta: float, action_rngs) -> RolloutBatch:
    """Run every env T steps under the current policy and record everything.

    Envs persist across calls; an env hitting its episode end is reset in
    place and flagged done at that step.
    """
    n = len(envs)
    n_tls = params.config.n_tls
    shape = params.config.input_shape
    states = np.zeros((n, t_steps, *shape))
    actions = np.zeros((n, t_steps, n_tls), dtype=np.int64)
    logp_old = np.zeros((n, t_steps))
    rewards = np.zeros((n, t_steps))
    dones = np.zeros((n, t_steps), dtype=bool)
    v_glob = np.zeros((n, t_steps + 1))
    v_loc = np.zeros((n, t_steps + 1, n_tls))
    local_rs = np.zeros((n, t_steps, n_tls))
    raw_global = np.zeros((n, t_steps))

    for i, env in enumerate(envs):
        rng = action_rngs[i]
        for t in range(t_steps):
            state = env.state
            out = forward(params, state)
            policy = out.policy
            acts = sample_actions(policy, rng)
            step = env.step(list(acts))
            states[i, t] = state
            actions[i, t] = acts
            rows = np.arange(n_tls)
            logp_old[i, t] = float(np.log(policy[rows, acts]).sum())
            v_glob[i, t] = out.global_np
            v_loc[i, t] = out.locals_np
            raw_global[i, t] = step.global_raw
            raw_hybrid = hybrid_reward(step.global_raw, step.locals_raw, beta)
            rewards[i, t] = hybrid_norm.normalize(raw_hybrid)
            local_rs[i, t] = [local_norm.normalize(float(x)) for x in step.locals_raw]
            dones[i, t] = step.done
            if step.done:
                env.reset()
        boot = forward(params, env.state)
        v_glob[i, t_steps] = boot.global_np
        v_loc[i, t_steps] = boot.locals_np
    return RolloutBatch(states, actions, logp_old, rewards, dones, v_glob, v_loc,
                        local_rs, raw_global)


def add_advantages(batch: RolloutBatch, gamma: float, lam: float) -> None:
    n, t_len = batch.rewards.shape
    n_tls = batch.values_local.shape[2]
    batch.advantages = np.zeros((n, t_len))
    batch.returns = np.zeros((n, t_len))
    batch.local_returns = np.zeros((n, t_len, n_tls))
    for i in range(n):
        adv, ret = compute_gae(batch.rewards[i], batch.values_global[i],
                               batch.dones[i], gamma, lam)
        batch.advantages[i] = adv
        batch.returns[i] = ret
        for j in range(n_tls):
            _, lret = compute_gae(batch.local_rewards[i, :, j],
                                  batch.values_local[i, :, j],
                                  batch.dones[i], gamma, lam)
            batch.local_returns[i, :, j] = lret


# ------------------------------------------------------------------- update

@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    updates: int = 0

    def merge(self, pl, vl, ent):
        self.policy_loss += pl
        self.value_loss += vl
        self.entropy += ent
        self.updates += 1

    def mean(self, attr):
        return getattr(self, attr) / self.updates if self.updates else 0.0


def minibatch_loss(params: NetParams, states, acts, logp_old, adv, ret_g, v_old_g,
                   ret_l, v_old_l, eps: float, c1: float, c2: float):
    """Assemble the full objective over one minibatch; returns loss tensors."""
    logp_list, vg_list, vl_list, lp_list = [], [], [], []
    for s in range(states.shape[0]):
        out = forward(params, states[s])
        picked = ad.gather_rows(out.log_policy, acts[s])
        logp_list.append(ad.ssum(picked))
        vg_list.append(out.global_value)
        vl_list.append(out.local_values)
        lp_list.append(out.log_policy)
    logp_new = ad.stack(logp_list)
    v_glob = ad.stack(vg_list)
    v_locs = ad.stack(vl_list)
    log_pols = ad.stack(lp_list)
    pl = policy_loss(logp_new, logp_old, adv, eps)
    vl = ad.add(value_loss(v_glob, v_old_g, ret_g, eps),
                value_loss(v_locs, v_old_l, ret_l, eps))
    ent = entropy_bonus(log_pols)
    return total_objective(pl, vl, ent, c1, c2), pl, vl, ent


def ppo_update(params: NetParams, batch: RolloutBatch, config: TrainConfig,
               adam: AdamState, lr: float, eps: float,
               shuffle_rng: np.random.Generator) -> UpdateStats:
    nt = batch.n_samples
    if nt % config.minibatch:
        raise ValueError(f"minibatch {config.minibatch} does not divide batch size {nt}")
    flat_states = batch.states.reshape(nt, *batch.states.shape[2:])
    flat_actions = batch.actions.reshape(nt, -1)
    flat_logp = batch.logp_old.reshape(nt)
    flat_adv = batch.advantages.reshape(nt)
    flat_ret = batch.returns.reshape(nt)
    flat_vg = batch.values_global[:, :-1].reshape(nt)
    flat_lret = batch.local_returns.reshape(nt, -1)
    flat_vl = batch.values_local[:, :-1].reshape(nt, -1)
    # batch-level advantage normalization (zero mean, unit std)
    flat_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

    stats = UpdateStats()
    tensors = params.tensors
    for _ in range(config.epochs):
        perm = shuffle_rng.permutation(nt)
        for start in range(0, nt, config.minibatch):
            idx = perm[start:start + config.minibatch]
            ad.zero_grads(tensors.values())
            with ad.Tape() as tape:
                loss, pl, vl, ent = minibatch_loss(
                    params, flat_states[idx], flat_actions[idx], flat_logp[idx],
                    flat_adv[idx], flat_ret[idx], flat_vg[idx],
                    flat_lret[idx], flat_vl[idx], eps, config.c1, config.c2)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise RuntimeError(f"training diverged: loss = {loss_val}")
                stats.merge(pl.item(), vl.item(), ent.item())
                tape.backward(loss)
            adam_step(tensors, collect_grads(tensors), adam, lr)
    return stats


# -------------------------------------------------------------------- train

LOG_COLUMNS = ["episode", "mean_net_outflow", "policy_loss", "value_loss",
               "entropy", "lr", "epsilon", "beta"]


def train(config: TrainConfig, net_config: NetConfig, env_factory,
          out_dir=None, resume=None, verbose: bool = False):
    """Full training loop; returns (params, per-episode log rows).

    ``env_factory(i)`` must build the i-th of N independent, deterministic
    environment instances.  With ``out_dir`` set, a checkpoint lands after
    every episode along with a cumulative training-log CSV.  ``resume``
    restores parameters, optimizer moments, reward normalizers, and the
    episode counter from a checkpoint file.
    """
    envs = [env_factory(i) for i in range(config.actors)]
    for env in envs:
        env.reset()
    seq = np.random.SeedSequence(config.seed)
    children = seq.spawn(config.actors + 1)
    shuffle_rng = np.random.default_rng(children[0])
    action_rngs = [np.random.default_rng(c) for c in children[1:]]

    start_episode = 0
    if resume is not None:
        params, extras, manifest = load_params(resume)
        if params.config != net_config:
            raise ValueError("checkpoint net config does not match requested config")
        adam = AdamState.for_params(params.tensors)
        for name in params.tensors:
            adam.m[name] = extras[f"adam.m.{name}"].copy()
            adam.v[name] = extras[f"adam.v.{name}"].copy()
        adam.step = int(manifest["adam_step"])
        hybrid_norm = RewardNormalizer.from_state(extras["norm.hybrid"])
        local_norm = RewardNormalizer.from_state(extras["norm.local"])
        start_episode = int(manifest["episode"]) + 1
    else:
        params = init_network(net_config, config.seed)
        adam = AdamState.for_params(params.tensors)
        hybrid_norm = RewardNormalizer()
        local_norm = RewardNormalizer()

    t_len = config.rollout_len
    rounds = max(1, math.ceil(config.episode_len / t_len))
    logs: list[dict] = []
    for episode in range(start_episode, config.episodes):
        alpha = 1.0 - episode / config.episodes
        lr = config.lr0 * alpha
        eps = config.clip0 * alpha
        beta = config.beta_for_episode(episode)
        outflows = []
        stats = UpdateStats()
        for _ in range(rounds):
            batch = collect_rollouts(envs, params, t_len, hybrid_norm, local_norm,
                                     beta, action_rngs)
            add_advantages(batch, config.gamma, config.lam)
            round_stats = ppo_update(params, batch, config, adam, lr, eps, shuffle_rng)
            stats.merge(round_stats.mean("policy_loss"), round_stats.mean("value_loss"),
                        round_stats.mean("entropy"))
            outflows.append(batch.raw_global.mean())
        row = {
            "episode": episode,
            "mean_net_outflow": float(np.mean(outflows)),
            "policy_loss": stats.mean("policy_loss"),
            "value_loss": stats.mean("value_loss"),
            "entropy": stats.mean("entropy"),
            "lr": lr,
            "epsilon": eps,
            "beta": beta,
        }
        logs.append(row)
        if verbose:
            print(f"episode {episode}: outflow {row['mean_net_outflow']:.3f} "
                  f"entropy {row['entropy']:.3f} beta {beta:.2f}")
        if out_dir is not None:
            out_dir = Path(out_dir)
            save_checkpoint(out_dir / f"checkpoint_ep{episode:03d}.ck", params, adam,
                            hybrid_norm, local_norm, episode)
            save_checkpoint(out_dir / "checkpoint_latest.ck", params, adam,
                            hybrid_norm, local_norm, episode)
            write_training_log(out_dir / "training_log.csv", logs)
    return params, logs


def save_checkpoint(path, params: NetParams, adam: AdamState,
                    hybrid_norm: RewardNormalizer, local_norm: RewardNormalizer,
                    episode: int) -> None:
    extras = {}
    for name in params.tensors:
        extras[f"adam.m.{name}"] = adam.m[name]
        extras[f"adam.v.{name}"] = adam.v[name]
    extras["norm.hybrid"] = hybrid_norm.state()
    extras["norm.local"] = local_norm.state()
    save_params(path, params, extra_arrays=extras,
                extra_manifest={"episode": episode, "adam_step": adam.step})


def write_training_log(path, logs: list[dict]) -> None:
    with open(path, "w", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in logs:
            writer.writerow(row)
