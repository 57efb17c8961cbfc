"""Proximal policy optimization with separate policy and value networks.

On-policy training loop: collect a fixed number of transitions, estimate
advantages with GAE, then run several epochs of clipped-surrogate updates
over shuffled minibatches. Either network can be frozen for a whole
training run, and an optional KL threshold stops the epoch loop early
once the updated policy drifts too far from the data-collection policy.
Action masking is an inference-time device and is never applied while
collecting training data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .env import ContainerEnv
from .nets import (
    MLPSpec,
    Optimizer,
    ParamSet,
    PolicyCheckpoint,
    backward,
    forward,
    forward_cached,
    init_params,
    kl_divergence,
    log_softmax,
    sample_with_log_prob,
    softmax,
)

DEFAULT_HIDDEN = (64, 64)
POLICY_LAST_LAYER_SCALE = 0.01  # near-uniform initial policy

TRAIN_LOG_COLUMNS = (
    "update_idx",
    "timesteps",
    "mean_ep_reward",
    "mean_ep_len",
    "policy_loss",
    "value_loss",
    "approx_kl",
    "clip_frac",
)


@dataclass(frozen=True)
class PPOHyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    policy_lr: float = 3e-4
    value_lr: float = 3e-4
    steps_per_update: int = 2048
    epochs_per_update: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.0
    target_kl: float | None = None
    freeze_policy: bool = False
    freeze_value: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be > 0")
        if self.freeze_policy and self.freeze_value:
            raise ValueError("cannot freeze both networks")


@dataclass
class RolloutBuffer:
    observations: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,)
    log_probs: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) bool: episode ended after this transition
    last_value: float  # bootstrap for the unfinished tail episode
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_rewards: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    last_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted advantages over TD residuals, plus returns.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t, accumulated
    backward with factor gamma * lam within each episode. Returns are
    advantages plus value estimates.
    """
    T = len(rewards)
    advantages = np.zeros(T)
    gae = 0.0
    for t in range(T - 1, -1, -1):
        next_value = last_value if t == T - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        advantages[t] = gae
    return advantages, advantages + values


class Collector:
    """Collects fixed-size rollout batches from one environment.

    The environment persists across calls, so an episode can span update
    boundaries; its tail is bootstrapped with the value estimate of the
    next observation.
    """

    def __init__(self, env: ContainerEnv, sample_rng: np.random.Generator):
        self.env = env
        self.rng = sample_rng
        _, self.obs = env.reset()
        self._ep_reward = 0.0
        self._ep_len = 0

    def collect(self, policy: ParamSet, value: ParamSet, hp: PPOHyperparams) -> RolloutBuffer:
        T = hp.steps_per_update
        obs_dim = self.env.config.observation_dim
        observations = np.empty((T, obs_dim))
        actions = np.empty(T, dtype=np.int64)
        log_probs = np.empty(T)
        rewards = np.empty(T)
        values = np.empty(T)
        dones = np.zeros(T, dtype=bool)
        ep_rewards: list[float] = []
        ep_lengths: list[int] = []

        for t in range(T):
            observations[t] = self.obs
            logits = forward(policy.spec, policy, self.obs)
            action, logp = sample_with_log_prob(logits, self.rng)
            actions[t] = action
            log_probs[t] = logp
            values[t] = forward(value.spec, value, self.obs)[0]

            outcome = self.env.step(action)
            rewards[t] = outcome.reward
            self._ep_reward += outcome.reward
            self._ep_len += 1
            done = outcome.terminated or outcome.truncated
            dones[t] = done
            if done:
                ep_rewards.append(self._ep_reward)
                ep_lengths.append(self._ep_len)
                self._ep_reward = 0.0
                self._ep_len = 0
                _, self.obs = self.env.reset()
            else:
                self.obs = outcome.observation

        last_value = 0.0 if dones[-1] else float(forward(value.spec, value, self.obs)[0])
        return RolloutBuffer(
            observations=observations,
            actions=actions,
            log_probs=log_probs,
            rewards=rewards,
            values=values,
            dones=dones,
            last_value=last_value,
            episode_rewards=ep_rewards,
            episode_lengths=ep_lengths,
        )


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    approx_kl: float  # exact mean KL(old || updated) over the batch
    clip_fraction: float
    epochs_run: int
    first_minibatch_approx_kl: float
    first_minibatch_clip_fraction: float


def _entropy_grad(probs: np.ndarray, logp: np.ndarray) -> np.ndarray:
    # dH/dlogits_k = -p_k (ln p_k + H), rows are samples
    h = -(probs * logp).sum(axis=1, keepdims=True)
    return -probs * (logp + h)


def ppo_update(
    buffer: RolloutBuffer,
    policy: ParamSet,
    value: ParamSet,
    policy_opt: Optimizer,
    value_opt: Optimizer,
    hp: PPOHyperparams,
    shuffle_rng: np.random.Generator,
) -> UpdateStats:
    """Clipped-surrogate policy update and value regression over one buffer."""
    advantages, returns = compute_gae(
        buffer.rewards, buffer.values, buffer.dones, buffer.last_value, hp.gamma, hp.gae_lambda
    )
    buffer.returns = returns
    adv = advantages - advantages.mean()
    std = adv.std()
    if std > 0:
        adv = adv / std
    buffer.advantages = adv

    T = len(buffer)
    old_logits = forward(policy.spec, policy, buffer.observations)
    old_log_probs = buffer.log_probs

    policy_losses: list[float] = []
    value_losses: list[float] = []
    clip_fracs: list[float] = []
    first_mb_kl = 0.0
    first_mb_clip = 0.0
    measured_kl = 0.0
    epochs_run = 0
    first_minibatch = True

    for _ in range(hp.epochs_per_update):
        order = shuffle_rng.permutation(T)
        for start in range(0, T, hp.minibatch_size):
            idx = order[start : start + hp.minibatch_size]
            obs_mb = buffer.observations[idx]
            act_mb = buffer.actions[idx]
            adv_mb = adv[idx]
            ret_mb = returns[idx]
            old_lp_mb = old_log_probs[idx]
            B = len(idx)

            if not hp.freeze_policy:
                logits, cache = forward_cached(policy.spec, policy, obs_mb)
                logp_all = log_softmax(logits)
                probs = softmax(logits)
                logp_act = logp_all[np.arange(B), act_mb]
                ratio = np.exp(logp_act - old_lp_mb)
                surr1 = ratio * adv_mb
                clipped = np.clip(ratio, 1 - hp.clip_ratio, 1 + hp.clip_ratio)
                surr2 = clipped * adv_mb
                ent = -(probs * np.where(probs > 0, logp_all, 0.0)).sum(axis=1)
                loss = float(-np.minimum(surr1, surr2).mean() - hp.entropy_coef * ent.mean())
                policy_losses.append(loss)

                mb_clip = float((np.abs(ratio - 1.0) > hp.clip_ratio).mean())
                clip_fracs.append(mb_clip)
                mb_kl = float((old_lp_mb - logp_act).mean())
                if first_minibatch:
                    first_mb_kl = mb_kl
                    first_mb_clip = mb_clip
                    first_minibatch = False

                # d(-min(surr1, surr2))/dlogits: gradient flows through the
                # unclipped ratio wherever min picks it (ties included).
                active = (surr1 <= surr2).astype(float)
                coef = -(active * ratio * adv_mb) / B  # (B,)
                one_hot = np.zeros_like(probs)
                one_hot[np.arange(B), act_mb] = 1.0
                grad_logits = coef[:, None] * (one_hot - probs)
                if hp.entropy_coef != 0.0:
                    grad_logits -= hp.entropy_coef * _entropy_grad(probs, logp_all) / B
                backward(policy.spec, policy, cache, grad_logits)
                policy_opt.update(policy)

            if not hp.freeze_value:
                v_pred, v_cache = forward_cached(value.spec, value, obs_mb)
                v_pred = v_pred[:, 0]
                value_losses.append(float(((v_pred - ret_mb) ** 2).mean()))
                grad_v = (2.0 * (v_pred - ret_mb) / B)[:, None]
                backward(value.spec, value, v_cache, grad_v)
                value_opt.update(value)

        epochs_run += 1
        if not hp.freeze_policy:
            new_logits = forward(policy.spec, policy, buffer.observations)
            measured_kl = float(np.mean(kl_divergence(old_logits, new_logits)))
            if hp.target_kl is not None and measured_kl > hp.target_kl:
                break

    return UpdateStats(
        policy_loss=float(np.mean(policy_losses)) if policy_losses else 0.0,
        value_loss=float(np.mean(value_losses)) if value_losses else 0.0,
        approx_kl=measured_kl,
        clip_fraction=float(np.mean(clip_fracs)) if clip_fracs else 0.0,
        epochs_run=epochs_run,
        first_minibatch_approx_kl=first_mb_kl,
        first_minibatch_clip_fraction=first_mb_clip,
    )


def default_specs(obs_dim: int, action_dim: int) -> tuple[MLPSpec, MLPSpec]:
    policy = MLPSpec(input_dim=obs_dim, hidden_layers=DEFAULT_HIDDEN, output_dim=action_dim)
    value = MLPSpec(input_dim=obs_dim, hidden_layers=DEFAULT_HIDDEN, output_dim=1)
    return policy, value


def train(
    env_factory,
    hp: PPOHyperparams,
    budget_timesteps: int,
    seed: int,
    initial: PolicyCheckpoint | None = None,
    phase_name: str = "",
    log_path: str | None = None,
) -> tuple[PolicyCheckpoint, list[dict]]:
    """Run PPO for ``ceil(budget / steps_per_update)`` update cycles.

    ``env_factory`` maps a seed to a fresh environment. With ``initial``
    set, training continues from that checkpoint (dimensions must match
    the environment); otherwise both networks are freshly initialized.
    Returns the final checkpoint and one stats row per update.
    """
    if budget_timesteps < hp.steps_per_update:
        raise ValueError(
            f"budget {budget_timesteps} is below one update of {hp.steps_per_update} steps"
        )
    ss = np.random.SeedSequence(seed)
    env_seed, sample_seed, pol_seed, val_seed, shuffle_seed = [
        int(s.generate_state(1)[0]) for s in ss.spawn(5)
    ]
    env = env_factory(env_seed)
    obs_dim, action_dim = env.config.observation_dim, env.config.action_dim

    if initial is not None:
        if initial.policy_spec.input_dim != obs_dim or initial.policy_spec.output_dim != action_dim:
            raise ValueError(
                f"checkpoint expects obs {initial.policy_spec.input_dim} / actions "
                f"{initial.policy_spec.output_dim}, environment has {obs_dim} / {action_dim}"
            )
        policy = ParamSet(initial.policy_spec, initial.policy_params.copy())
        value = ParamSet(initial.value_spec, initial.value_params.copy())
        timesteps_prev = initial.timesteps_trained
    else:
        policy_spec, value_spec = default_specs(obs_dim, action_dim)
        policy = init_params(
            policy_spec, np.random.default_rng(pol_seed), last_layer_scale=POLICY_LAST_LAYER_SCALE
        )
        value = init_params(value_spec, np.random.default_rng(val_seed))
        timesteps_prev = 0

    collector = Collector(env, np.random.default_rng(sample_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    policy_opt = Optimizer(policy.values.size, hp.policy_lr)
    value_opt = Optimizer(value.values.size, hp.value_lr)

    n_updates = math.ceil(budget_timesteps / hp.steps_per_update)
    rows: list[dict] = []
    timesteps = 0
    for update_idx in range(n_updates):
        buffer = collector.collect(policy, value, hp)
        stats = ppo_update(buffer, policy, value, policy_opt, value_opt, hp, shuffle_rng)
        timesteps += len(buffer)
        rows.append(
            {
                "update_idx": update_idx,
                "timesteps": timesteps,
                "mean_ep_reward": (
                    float(np.mean(buffer.episode_rewards)) if buffer.episode_rewards else float("nan")
                ),
                "mean_ep_len": (
                    float(np.mean(buffer.episode_lengths)) if buffer.episode_lengths else float("nan")
                ),
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "approx_kl": stats.approx_kl,
                "clip_frac": stats.clip_fraction,
            }
        )
    if log_path is not None:
        write_training_log(log_path, rows)

    ckpt = PolicyCheckpoint(
        policy_spec=policy.spec,
        value_spec=value.spec,
        policy_params=policy.values.copy(),
        value_params=value.values.copy(),
        phase=phase_name,
        seed=seed,
        timesteps_trained=timesteps_prev + timesteps,
    )
    return ckpt, rows


def write_training_log(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAIN_LOG_COLUMNS)
        for row in rows:
            writer.writerow([row[k] for k in TRAIN_LOG_COLUMNS])
