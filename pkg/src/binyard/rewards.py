"""Engineered reward functions for the container-emptying task.

Four reward families are supported, selected by ``RewardSpec.kind``:

* ``simple_gaussian`` — only the Gaussian action reward (the naive
  volume-criteria baseline trains with this).
* ``custom`` — Gaussian action reward plus per-step positional rewards for
  every container plus an episode-termination reward.
* ``precision`` — custom plus a narrow in-band bonus on the acted container.
* ``precision_action_penalty`` — precision plus a flat penalty on every
  emptying action, nudging the policy toward fewer, larger emptyings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIMPLE_GAUSSIAN = "simple_gaussian"
CUSTOM = "custom"
PRECISION = "precision"
PRECISION_ACTION_PENALTY = "precision_action_penalty"

REWARD_KINDS = (SIMPLE_GAUSSIAN, CUSTOM, PRECISION, PRECISION_ACTION_PENALTY)


@dataclass(frozen=True)
class RewardSpec:
    """Which reward family is active and its parameters."""

    kind: str = CUSTOM
    peak_height: float = 1.0  # h, Gaussian value at the ideal volume
    peak_width: float = 5.0  # w, Gaussian std dev in volume units
    penalty: float = -1.0  # r_pen for impossible emptyings
    action_penalty: float = 0.0  # flat cost per emptying action
    positional_enabled: bool = True
    termination_enabled: bool = True
    termination_bonus: float = 0.2
    overflow_penalty: float = -30.0
    precision_halfwidth: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.peak_height > 1.0:
            raise ValueError("peak_height must be <= 1")
        if self.peak_height <= self.penalty:
            raise ValueError("peak_height must exceed penalty")
        if self.peak_width <= 0:
            raise ValueError("peak_width must be > 0")
        if self.precision_halfwidth <= 0:
            raise ValueError("precision_halfwidth must be > 0")

    @property
    def uses_precision(self) -> bool:
        return self.kind in (PRECISION, PRECISION_ACTION_PENALTY)


def simple_gaussian_spec(**overrides) -> RewardSpec:
    """Action reward only; positional and termination terms disabled."""
    base = dict(kind=SIMPLE_GAUSSIAN, positional_enabled=False, termination_enabled=False)
    base.update(overrides)
    return RewardSpec(**base)


def custom_spec(**overrides) -> RewardSpec:
    return RewardSpec(**{"kind": CUSTOM, **overrides})


def precision_spec(action_penalty: float = 0.0, **overrides) -> RewardSpec:
    kind = PRECISION_ACTION_PENALTY if action_penalty > 0 else PRECISION
    return RewardSpec(kind=kind, action_penalty=action_penalty, **overrides)


def gaussian_reward(
    action: int,
    volume: float,
    ideal: float,
    pu_available: bool,
    spec: RewardSpec,
) -> float:
    """Peak-shaped reward for emptying a container at ``volume``.

    Returns the flat penalty when the container is empty or no PU is free;
    otherwise a Gaussian bump centred on the ideal volume, rescaled to run
    from ``penalty`` (far away) up to ``peak_height`` (exactly on target).
    """
    if action <= 0:
        raise ValueError("gaussian_reward applies to emptying actions only")
    h, r_pen = spec.peak_height, spec.penalty
    if volume == 0.0 or not pu_available:
        return r_pen
    return (h - r_pen) * math.exp(-((volume - ideal) ** 2) / (2.0 * spec.peak_width**2)) + r_pen


def positional_reward(volume: float, ideal: float) -> float:
    """Per-container nudge toward its ideal fill state, applied every step."""
    if ideal <= 0:
        raise ValueError("ideal volume must be > 0")
    if volume <= ideal:
        return 1.0 - abs((ideal - volume) / ideal) ** 0.5
    return -0.1


def cumulative_positional(volumes, ideals) -> float:
    """Sum of positional rewards over all containers."""
    volumes = np.asarray(volumes, dtype=float)
    ideals = np.asarray(ideals, dtype=float)
    if volumes.shape != ideals.shape:
        raise ValueError("volumes and ideals must have equal length")
    return float(sum(positional_reward(v, pv) for v, pv in zip(volumes, ideals)))


def termination_reward(any_overflow: bool, spec: RewardSpec) -> float:
    """Large penalty on overflow, small bonus for surviving the step."""
    return spec.overflow_penalty if any_overflow else spec.termination_bonus


def precision_reward(volume: float, ideal: float, spec: RewardSpec) -> float:
    """In-band bonus: 1.0 strictly inside ideal +- halfwidth, else -0.1."""
    hw = spec.precision_halfwidth
    if ideal - hw < volume < ideal + hw:
        return 1.0
    return -0.1


def compose_reward(
    action: int,
    success: bool,
    volumes_before,
    volumes_after,
    ideals,
    any_overflow: bool,
    spec: RewardSpec,
) -> tuple[float, np.ndarray]:
    """Total step reward and its per-container decomposition.

    The action term evaluates the acted container at its pre-emptying
    volume; positional terms evaluate the post-transition volumes. The
    per-container vector carries each container's positional share plus the
    action term on the acted container; the termination term is global and
    appears only in the total.
    """
    volumes_before = np.asarray(volumes_before, dtype=float)
    volumes_after = np.asarray(volumes_after, dtype=float)
    ideals = np.asarray(ideals, dtype=float)
    n = len(ideals)
    per_container = np.zeros(n)

    if spec.positional_enabled:
        for j in range(n):
            per_container[j] = positional_reward(volumes_after[j], ideals[j])

    if action > 0:
        v = float(volumes_before[action - 1])
        ideal = float(ideals[action - 1])
        action_term = gaussian_reward(action, v, ideal, pu_available=success, spec=spec)
        if spec.uses_precision:
            action_term += precision_reward(v, ideal, spec)
        if spec.kind == PRECISION_ACTION_PENALTY:
            action_term -= spec.action_penalty
        per_container[action - 1] += action_term

    total = float(per_container.sum())
    if spec.termination_enabled:
        total += termination_reward(any_overflow, spec)
    return total, per_container


def reward_spec_to_dict(spec: RewardSpec) -> dict:
    return {
        "kind": spec.kind,
        "peak_height": spec.peak_height,
        "peak_width": spec.peak_width,
        "penalty": spec.penalty,
        "action_penalty": spec.action_penalty,
        "positional_enabled": spec.positional_enabled,
        "termination_enabled": spec.termination_enabled,
        "termination_bonus": spec.termination_bonus,
        "overflow_penalty": spec.overflow_penalty,
        "precision_halfwidth": spec.precision_halfwidth,
    }


def reward_spec_from_dict(data: dict) -> RewardSpec:
    return RewardSpec(
        kind=str(data["kind"]),
        peak_height=float(data.get("peak_height", 1.0)),
        peak_width=float(data.get("peak_width", 5.0)),
        penalty=float(data.get("penalty", -1.0)),
        action_penalty=float(data.get("action_penalty", 0.0)),
        positional_enabled=bool(data.get("positional_enabled", True)),
        termination_enabled=bool(data.get("termination_enabled", True)),
        termination_bonus=float(data.get("termination_bonus", 0.2)),
        overflow_penalty=float(data.get("overflow_penalty", -30.0)),
        precision_halfwidth=float(data.get("precision_halfwidth", 0.5)),
    )
