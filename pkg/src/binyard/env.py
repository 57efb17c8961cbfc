"""MDP wrapper around the plant: episode lifecycle and state evolution.

Discrete timesteps; action 0 does nothing, action i empties container i
into a free belt of one of its allowed PUs. Emptying is atomic: the
container's volume is zero in the next state and the chosen belt stays
busy for the job's full processing duration. Everything else keeps
filling. In training mode an episode terminates as soon as any container
exceeds its physical volume limit; in eval mode violations are only
recorded so long rollouts stay measurable.

Observation layout for n containers and m PUs (length 4n + m):
    volumes / max_volume | per-PU time-until-free, normalized | emptying
    flags | previous per-container rewards (raw) | ideal / max_volume
PU times are busy seconds divided by the timestep length, then by a fixed
600-step horizon, so they stay in [0, 1] for every job a default plant
can generate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .plant import (
    CANONICAL_STEP_SECONDS,
    ContainerSpec,
    PlantConfig,
    default_plant,
    fill_step,
    plant_from_dict,
    plant_to_dict,
    processing_duration,
)
from .rewards import RewardSpec, compose_reward, reward_spec_from_dict, reward_spec_to_dict

PU_TIME_HORIZON_STEPS = 600.0  # max episode length, keeps p features in [0, 1]

INIT_MODES = ("zeros", "uniform", "phase1")


@dataclass(frozen=True)
class EnvConfig:
    plant: PlantConfig = field(default_factory=default_plant)
    timestep_seconds: float = 60.0
    episode_length: int = 600
    stochastic_fill: bool = True
    pu_constrained: bool = True  # False: every container has its own adequate PU
    reward_spec: RewardSpec = field(default_factory=RewardSpec)
    init_mode: str = "uniform"
    eval_mode: bool = False  # True: never terminate on overflow, only record it

    def __post_init__(self) -> None:
        if self.timestep_seconds <= 0:
            raise ValueError("timestep_seconds must be > 0")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be > 0")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"unknown init_mode {self.init_mode!r}")

    @property
    def n(self) -> int:
        return self.plant.n_containers

    @property
    def n_pus(self) -> int:
        return self.plant.n_pus

    @property
    def observation_dim(self) -> int:
        return 4 * self.n + self.n_pus

    @property
    def action_dim(self) -> int:
        return self.n + 1


@dataclass
class EnvState:
    """Dynamic simulator state."""

    volumes: np.ndarray  # (n,) current container volumes
    belt_timers: list[np.ndarray]  # per PU: (belt_count,) remaining busy seconds
    emptying_flags: np.ndarray  # (n,) bool, true on the step a container empties
    last_rewards: np.ndarray  # (n,) previous step's per-container rewards
    step_index: int = 0

    @property
    def pu_free_in(self) -> np.ndarray:
        """Per-PU seconds until some belt is free (0 = a belt is free now)."""
        return np.array([float(t.min()) for t in self.belt_timers])

    def copy(self) -> "EnvState":
        return EnvState(
            volumes=self.volumes.copy(),
            belt_timers=[t.copy() for t in self.belt_timers],
            emptying_flags=self.emptying_flags.copy(),
            last_rewards=self.last_rewards.copy(),
            step_index=self.step_index,
        )


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    per_container_rewards: np.ndarray
    terminated: bool
    truncated: bool
    info: dict


def scaled_container(spec: ContainerSpec, timestep_seconds: float) -> ContainerSpec:
    """Rescale per-step drift and noise from the canonical 60 s step.

    Drift scales linearly with the step length; the random-walk noise
    variance scales linearly, so sigma scales with the square root.
    """
    ratio = timestep_seconds / CANONICAL_STEP_SECONDS
    if ratio == 1.0:
        return spec
    return replace(spec, alpha=spec.alpha * ratio, noise_sigma=spec.noise_sigma * math.sqrt(ratio))


def compute_action_mask(state: EnvState, config: EnvConfig) -> np.ndarray:
    """Admissible actions: entry 0 always; entry i iff container i is
    nonempty and (unconstrained, or some allowed PU has a free belt)."""
    plant = config.plant
    mask = np.zeros(config.action_dim, dtype=bool)
    mask[0] = True
    pu_free = {pu.id: bool((state.belt_timers[j] == 0.0).any()) for j, pu in enumerate(plant.pus)}
    for i, c in enumerate(plant.containers):
        if state.volumes[i] <= 0.0:
            continue
        if not config.pu_constrained or any(pu_free[pid] for pid in c.allowed_pus):
            mask[i + 1] = True
    return mask


def build_observation(state: EnvState, config: EnvConfig) -> np.ndarray:
    plant = config.plant
    max_vols = np.array([c.max_volume for c in plant.containers])
    ideals = np.array([c.ideal_volume for c in plant.containers])
    pu_norm = state.pu_free_in / config.timestep_seconds / PU_TIME_HORIZON_STEPS
    return np.concatenate(
        [
            state.volumes / max_vols,
            pu_norm,
            state.emptying_flags.astype(float),
            state.last_rewards,
            ideals / max_vols,
        ]
    )


class ContainerEnv:
    """Single-threaded environment instance owning its RNG.

    Bit-identical trajectories are guaranteed for equal (config, seed,
    action sequence): fill noise is drawn as one block of n samples per
    step regardless of the action taken, so two agents evaluated with the
    same seed see identical noise streams.
    """

    def __init__(self, config: EnvConfig, seed: int = 0):
        self.config = config
        self.plant = config.plant
        self._scaled = [
            scaled_container(c, config.timestep_seconds) for c in self.plant.containers
        ]
        self._alphas = np.array([c.alpha for c in self._scaled])
        self._sigmas = np.array([c.noise_sigma for c in self._scaled])
        self._ideals = np.array([c.ideal_volume for c in self.plant.containers])
        self._max_vols = np.array([c.max_volume for c in self.plant.containers])
        self._rng = np.random.default_rng(seed)
        self._obs_dim = config.observation_dim
        self.state: EnvState | None = None

    @property
    def n(self) -> int:
        return self.config.n

    def reset(self, seed: int | None = None) -> tuple[EnvState, np.ndarray]:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        volumes = self._initial_volumes()
        self.state = EnvState(
            volumes=volumes,
            belt_timers=[np.zeros(pu.belt_count) for pu in self.plant.pus],
            emptying_flags=np.zeros(self.n, dtype=bool),
            last_rewards=np.zeros(self.n),
            step_index=0,
        )
        return self.state, self._observe()

    def _initial_volumes(self) -> np.ndarray:
        mode = self.config.init_mode
        n = self.n
        if mode == "zeros":
            return np.zeros(n)
        if mode == "uniform":
            return self._rng.uniform(0.0, 0.75 * self._ideals)
        # phase1: 8..11 containers (capped by n) start close enough to their
        # ideal volume to cross it within a 25-step episode; the rest start low.
        volumes = self._rng.uniform(0.0, 0.5 * self._ideals)
        k = int(self._rng.integers(min(8, n), min(11, n) + 1))
        chosen = self._rng.choice(n, size=k, replace=False)
        for i in chosen:
            high = 25.0 * self._alphas[i]
            low = min(1.0, 0.5 * high)
            volumes[i] = self._ideals[i] - self._rng.uniform(low, high)
        return volumes

    def action_mask(self) -> np.ndarray:
        self._require_state()
        return compute_action_mask(self.state, self.config)

    def _observe(self) -> np.ndarray:
        """Same layout as :func:`build_observation`, using cached constants."""
        state, n = self.state, self.n
        obs = np.empty(self._obs_dim)
        obs[:n] = state.volumes / self._max_vols
        m = self.config.n_pus
        ts = self.config.timestep_seconds
        for j in range(m):
            obs[n + j] = state.belt_timers[j].min() / ts / PU_TIME_HORIZON_STEPS
        obs[n + m : 2 * n + m] = state.emptying_flags
        obs[2 * n + m : 3 * n + m] = state.last_rewards
        obs[3 * n + m :] = self._ideals / self._max_vols
        return obs

    def step(self, action: int) -> StepOutcome:
        self._require_state()
        state, config = self.state, self.config
        n = self.n
        if not 0 <= action <= n:
            raise ValueError(f"action {action} out of range 0..{n}")

        volumes_before = state.volumes.copy()
        success = False
        pu_idx = belt_idx = -1
        pu_assigned = 0  # stays 0 for a dedicated-pool job in unconstrained mode
        emptied_volume = float("nan")
        if action > 0:
            success, pu_idx, belt_idx = self._admit(action)
            if success:
                emptied_volume = float(volumes_before[action - 1])
                if pu_idx >= 0:
                    pu_assigned = self.plant.pus[pu_idx].id

        # PU busy-time consumed this step, then advance the clocks.
        ts = config.timestep_seconds
        consumed = np.array([float(np.minimum(t, ts).sum()) for t in state.belt_timers])
        for t in state.belt_timers:
            np.maximum(t - ts, 0.0, out=t)

        duration = 0.0
        if success:
            spec = self.plant.containers[action - 1]
            ref_pu = pu_assigned if pu_assigned else spec.allowed_pus[0]
            pair = self.plant.pair_params(spec.id, ref_pu)
            duration = processing_duration(emptied_volume, pair)
            if pu_idx >= 0:
                state.belt_timers[pu_idx][belt_idx] = duration

        # Fill everything that was not emptied; the emptied container restarts
        # at exactly zero. Noise is drawn for all n containers every step.
        if config.stochastic_fill:
            noise = self._rng.standard_normal(n) * self._sigmas
        else:
            noise = np.zeros(n)
        next_volumes = np.maximum(0.0, self._alphas + volumes_before + noise)
        if success:
            next_volumes[action - 1] = 0.0

        any_overflow = bool((next_volumes > self._max_vols).any())
        reward, per_container = compose_reward(
            action=action,
            success=success,
            volumes_before=volumes_before,
            volumes_after=next_volumes,
            ideals=self._ideals,
            any_overflow=any_overflow,
            spec=config.reward_spec,
        )

        state.volumes = next_volumes
        state.emptying_flags = np.zeros(n, dtype=bool)
        if success:
            state.emptying_flags[action - 1] = True
        state.last_rewards = per_container
        state.step_index += 1

        terminated = any_overflow and not config.eval_mode
        truncated = state.step_index >= config.episode_length
        info = {
            "action_success": success,
            "acted_container": self.plant.containers[action - 1].id if action > 0 else 0,
            "pu_assigned": pu_assigned,
            "emptied_volume": emptied_volume,
            "processing_seconds": duration,
            "overflow": any_overflow,
            "pu_busy_consumed": consumed,
        }
        return StepOutcome(
            observation=self._observe(),
            reward=reward,
            per_container_rewards=per_container,
            terminated=terminated,
            truncated=truncated,
            info=info,
        )

    def _admit(self, action: int) -> tuple[bool, int, int]:
        """Can container ``action`` be emptied now? Returns (ok, pu_idx, belt_idx).

        Ties break toward the lowest PU id, then the lowest belt index.
        """
        state = self.state
        if state.volumes[action - 1] <= 0.0:
            return False, -1, -1
        if not self.config.pu_constrained:
            return True, -1, -1
        spec = self.plant.containers[action - 1]
        for j, pu in enumerate(self.plant.pus):
            if pu.id not in spec.allowed_pus:
                continue
            free = np.flatnonzero(state.belt_timers[j] == 0.0)
            if free.size:
                return True, j, int(free[0])
        return False, -1, -1

    def _require_state(self) -> None:
        if self.state is None:
            raise RuntimeError("call reset() before interacting with the environment")


# Trajectory CSV: one row per step. ``container_id`` and ``volume`` describe
# the acted container (0 / 0.0 for do-nothing steps); pu<j>_busy columns hold
# each PU's remaining seconds until a belt frees up, after the step.

def trajectory_header(n_pus: int) -> list[str]:
    return ["step", "container_id", "volume", "action", "success", "reward"] + [
        f"pu{j + 1}_busy" for j in range(n_pus)
    ]


def write_trajectory_csv(path: str, rows: list[dict], n_pus: int) -> None:
    header = trajectory_header(n_pus)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[k] for k in header])


def env_config_to_dict(config: EnvConfig) -> dict:
    return {
        "plant": plant_to_dict(config.plant),
        "timestep_seconds": config.timestep_seconds,
        "episode_length": config.episode_length,
        "stochastic_fill": config.stochastic_fill,
        "pu_constrained": config.pu_constrained,
        "reward_spec": reward_spec_to_dict(config.reward_spec),
        "init_mode": config.init_mode,
        "eval_mode": config.eval_mode,
    }


def env_config_from_dict(data: dict) -> EnvConfig:
    return EnvConfig(
        plant=plant_from_dict(data["plant"]),
        timestep_seconds=float(data["timestep_seconds"]),
        episode_length=int(data["episode_length"]),
        stochastic_fill=bool(data["stochastic_fill"]),
        pu_constrained=bool(data["pu_constrained"]),
        reward_spec=reward_spec_from_dict(data["reward_spec"]),
        init_mode=str(data["init_mode"]),
        eval_mode=bool(data["eval_mode"]),
    )


def save_env_config(config: EnvConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(env_config_to_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")


def load_env_config(path: str) -> EnvConfig:
    with open(path, "r", encoding="utf-8") as f:
        return env_config_from_dict(json.load(f))
