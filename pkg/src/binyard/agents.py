"""Decision agents: the analytic controller, trivial baselines, and a
wrapper that runs a trained policy checkpoint with action masking.

Every agent implements ``act(obs, mask, state) -> int`` where ``mask`` is
the admissibility vector from the environment and ``state`` the raw
simulator state. The analytic agent reads true volumes from the state
when available and otherwise reconstructs them from the normalized
observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvState
from .nets import PolicyCheckpoint, ParamSet, forward, masked_logits, sample_categorical
from .plant import PlantConfig


@dataclass(frozen=True)
class AnalyticConfig:
    emergency_volume: float = 37.0  # empty at or above this regardless of ideal
    tolerance: float = 0.5  # |volume - ideal| band counted as "on target"

    def validate_for(self, plant: PlantConfig) -> None:
        for c in plant.containers:
            if not c.ideal_volume < self.emergency_volume < c.max_volume:
                raise ValueError(
                    f"container {c.id}: need ideal < emergency < max, got "
                    f"{c.ideal_volume} / {self.emergency_volume} / {c.max_volume}"
                )


def analytic_action(
    volumes: np.ndarray,
    ideals: np.ndarray,
    mask: np.ndarray,
    config: AnalyticConfig,
) -> int:
    """Rule-based emptying decision without lookahead.

    Among containers whose emptying is admissible right now: first any at
    or above the emergency volume (highest volume first), else any within
    tolerance of its ideal (closest first). Ties break on the lowest
    container index. Returns 0 when no rule fires.
    """
    candidates = [i for i in range(len(volumes)) if mask[i + 1]]
    emergencies = [i for i in candidates if volumes[i] >= config.emergency_volume]
    if emergencies:
        return 1 + min(emergencies, key=lambda i: (-volumes[i], i))
    precise = [i for i in candidates if abs(volumes[i] - ideals[i]) <= config.tolerance]
    if precise:
        return 1 + min(precise, key=lambda i: (abs(volumes[i] - ideals[i]), i))
    return 0


class AnalyticAgent:
    """Threshold controller mirroring the plant's semi-automated policy."""

    def __init__(self, plant: PlantConfig, config: AnalyticConfig | None = None):
        self.config = config or AnalyticConfig()
        self.config.validate_for(plant)
        self._ideals = np.array([c.ideal_volume for c in plant.containers])
        self._max_vols = np.array([c.max_volume for c in plant.containers])

    def act(self, obs: np.ndarray, mask: np.ndarray, state: EnvState | None = None) -> int:
        if state is not None:
            volumes = state.volumes
        else:
            volumes = obs[: len(self._ideals)] * self._max_vols
        return analytic_action(volumes, self._ideals, mask, self.config)


class DoNothingAgent:
    def act(self, obs, mask, state=None) -> int:
        return 0


class RandomAgent:
    """Uniformly random admissible action."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, obs, mask, state=None) -> int:
        admissible = np.flatnonzero(mask)
        return int(self.rng.choice(admissible))


class PolicyAgent:
    """Runs a trained policy with inference-time action masking.

    Greedy (masked argmax) by default; set ``sample=True`` for stochastic
    rollouts from the masked distribution.
    """

    def __init__(self, checkpoint: PolicyCheckpoint, sample: bool = False, seed: int = 0):
        self.params = ParamSet(checkpoint.policy_spec, checkpoint.policy_params.copy())
        self.sample = sample
        self.rng = np.random.default_rng(seed)

    def act(self, obs, mask, state=None) -> int:
        logits = forward(self.params.spec, self.params, np.asarray(obs, dtype=float))
        if self.sample:
            return sample_categorical(logits, self.rng, mask=mask)
        return int(np.argmax(masked_logits(logits, mask)))


AGENT_KINDS = ("analytic", "do-nothing", "random", "policy")


def make_agent(
    kind: str,
    plant: PlantConfig,
    checkpoint: PolicyCheckpoint | None = None,
    seed: int = 0,
    analytic_config: AnalyticConfig | None = None,
):
    """Construct an agent by CLI name."""
    if kind == "analytic":
        return AnalyticAgent(plant, analytic_config)
    if kind == "do-nothing":
        return DoNothingAgent()
    if kind == "random":
        return RandomAgent(seed=seed)
    if kind == "policy":
        if checkpoint is None:
            raise ValueError("policy agent requires a checkpoint")
        return PolicyAgent(checkpoint, seed=seed)
    raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")
