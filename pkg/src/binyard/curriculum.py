"""Five-phase training schedule and checkpoint hand-off between phases.

The schedule starts in a short, deterministic, resource-unconstrained
world with a shaped reward, sharpens precision, penalizes greedy
emptying, then injects stochastic fills and PU contention with the policy
frozen (value-only adaptation), and finally fine-tunes the policy under a
tight KL budget. Each phase consumes the previous phase's checkpoint.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .env import ContainerEnv, EnvConfig
from .nets import PolicyCheckpoint, save_checkpoint
from .plant import PlantConfig, default_plant
from .ppo import PPOHyperparams, train, write_training_log
from .rewards import (
    RewardSpec,
    custom_spec,
    precision_spec,
    reward_spec_from_dict,
    reward_spec_to_dict,
)


@dataclass(frozen=True)
class PhaseConfig:
    name: str
    budget_timesteps: int
    timestep_seconds: float
    episode_length_steps: int
    reward_spec: RewardSpec
    stochastic_fill: bool
    pu_constrained: bool
    freeze_policy: bool = False
    target_kl: float | None = None
    init_mode: str = "phase1"

    def __post_init__(self) -> None:
        if self.budget_timesteps <= 0:
            raise ValueError(f"{self.name}: budget must be > 0")
        if self.episode_length_steps <= 0:
            raise ValueError(f"{self.name}: episode length must be > 0")


@dataclass(frozen=True)
class CurriculumPlan:
    phases: tuple[PhaseConfig, ...]
    master_seed: int = 0
    output_dir: str = "runs/curriculum"


class PhaseFailure(RuntimeError):
    """A phase aborted; carries the 1-based phase index."""

    def __init__(self, phase_index: int, phase_name: str, cause: Exception):
        super().__init__(f"phase {phase_index} ({phase_name}) failed: {cause}")
        self.phase_index = phase_index


def default_plan(master_seed: int = 0, output_dir: str = "runs/curriculum") -> CurriculumPlan:
    """The shipped five-phase schedule (also serialized as table1.json)."""
    phases = (
        PhaseConfig(
            name="phase1_foundation",
            budget_timesteps=1_500_000,
            timestep_seconds=30.0,
            episode_length_steps=25,
            reward_spec=custom_spec(),
            stochastic_fill=False,
            pu_constrained=False,
            init_mode="phase1",
        ),
        PhaseConfig(
            name="phase2_precision",
            budget_timesteps=1_000_000,
            timestep_seconds=30.0,
            episode_length_steps=25,
            reward_spec=precision_spec(),
            stochastic_fill=False,
            pu_constrained=False,
            init_mode="phase1",
        ),
        PhaseConfig(
            name="phase3_action_cost",
            budget_timesteps=1_000_000,
            timestep_seconds=30.0,
            episode_length_steps=25,
            reward_spec=precision_spec(action_penalty=0.1),
            stochastic_fill=False,
            pu_constrained=False,
            init_mode="phase1",
        ),
        PhaseConfig(
            name="phase4_real_dynamics",
            budget_timesteps=500_000,
            timestep_seconds=60.0,
            episode_length_steps=600,
            reward_spec=precision_spec(),
            stochastic_fill=True,
            pu_constrained=True,
            freeze_policy=True,
            init_mode="uniform",
        ),
        PhaseConfig(
            name="phase5_kl_finetune",
            budget_timesteps=500_000,
            timestep_seconds=60.0,
            episode_length_steps=600,
            reward_spec=precision_spec(),
            stochastic_fill=True,
            pu_constrained=True,
            target_kl=0.01,
            init_mode="uniform",
        ),
    )
    return CurriculumPlan(phases=phases, master_seed=master_seed, output_dir=output_dir)


def phase_env_config(phase: PhaseConfig, plant: PlantConfig) -> EnvConfig:
    return EnvConfig(
        plant=plant,
        timestep_seconds=phase.timestep_seconds,
        episode_length=phase.episode_length_steps,
        stochastic_fill=phase.stochastic_fill,
        pu_constrained=phase.pu_constrained,
        reward_spec=phase.reward_spec,
        init_mode=phase.init_mode,
        eval_mode=False,
    )


def scale_for_desk_run(
    plan: CurriculumPlan, hp: PPOHyperparams, scale: float
) -> tuple[CurriculumPlan, PPOHyperparams]:
    """Shrink phase budgets (and the rollout length with them) by ``scale``.

    The rollout length is floored at one minibatch so every scaled budget
    still admits at least one full update.
    """
    if scale <= 0:
        raise ValueError("scale must be > 0")
    if scale == 1.0:
        return plan, hp
    steps = max(hp.minibatch_size, int(round(hp.steps_per_update * scale)))
    hp_scaled = replace(hp, steps_per_update=steps)
    phases = tuple(
        replace(p, budget_timesteps=max(steps, int(round(p.budget_timesteps * scale))))
        for p in plan.phases
    )
    return replace(plan, phases=phases), hp_scaled


def run_phase(
    phase: PhaseConfig,
    plant: PlantConfig,
    incoming: PolicyCheckpoint | None,
    seed: int,
    hp: PPOHyperparams | None = None,
    log_path: str | None = None,
) -> tuple[PolicyCheckpoint, list[dict]]:
    hp = hp or PPOHyperparams()
    hp_phase = replace(hp, freeze_policy=phase.freeze_policy, target_kl=phase.target_kl)
    env_cfg = phase_env_config(phase, plant)
    ckpt, rows = train(
        env_factory=lambda s: ContainerEnv(env_cfg, seed=s),
        hp=hp_phase,
        budget_timesteps=phase.budget_timesteps,
        seed=seed,
        initial=incoming,
        phase_name=phase.name,
        log_path=log_path,
    )
    return ckpt, rows


def run_curriculum(
    plan: CurriculumPlan,
    plant: PlantConfig | None = None,
    hp: PPOHyperparams | None = None,
    output_dir: str | None = None,
    incoming: PolicyCheckpoint | None = None,
) -> PolicyCheckpoint:
    """Execute all phases in order, persisting a checkpoint and a training
    log per phase under the output directory."""
    plant = plant or default_plant()
    hp = hp or PPOHyperparams()
    out = output_dir or plan.output_dir
    os.makedirs(out, exist_ok=True)
    phase_seeds = [
        int(s.generate_state(1)[0])
        for s in np.random.SeedSequence(plan.master_seed).spawn(len(plan.phases))
    ]
    ckpt = incoming
    for i, phase in enumerate(plan.phases):
        log_path = os.path.join(out, f"train_phase{i + 1}.csv")
        try:
            ckpt, rows = run_phase(phase, plant, ckpt, phase_seeds[i], hp)
        except Exception as e:
            raise PhaseFailure(i + 1, phase.name, e) from e
        write_training_log(log_path, rows)
        save_checkpoint(ckpt, os.path.join(out, f"ckpt_phase{i + 1}.bin"))
    assert ckpt is not None
    return ckpt


def plan_to_dict(plan: CurriculumPlan) -> dict:
    return {
        "master_seed": plan.master_seed,
        "output_dir": plan.output_dir,
        "phases": [
            {
                "name": p.name,
                "budget_timesteps": p.budget_timesteps,
                "timestep_seconds": p.timestep_seconds,
                "episode_length_steps": p.episode_length_steps,
                "reward_spec": reward_spec_to_dict(p.reward_spec),
                "stochastic_fill": p.stochastic_fill,
                "pu_constrained": p.pu_constrained,
                "freeze_policy": p.freeze_policy,
                "target_kl": p.target_kl,
                "init_mode": p.init_mode,
            }
            for p in plan.phases
        ],
    }


def plan_from_dict(data: dict) -> CurriculumPlan:
    phases = tuple(
        PhaseConfig(
            name=str(p["name"]),
            budget_timesteps=int(p["budget_timesteps"]),
            timestep_seconds=float(p["timestep_seconds"]),
            episode_length_steps=int(p["episode_length_steps"]),
            reward_spec=reward_spec_from_dict(p["reward_spec"]),
            stochastic_fill=bool(p["stochastic_fill"]),
            pu_constrained=bool(p["pu_constrained"]),
            freeze_policy=bool(p.get("freeze_policy", False)),
            target_kl=None if p.get("target_kl") is None else float(p["target_kl"]),
            init_mode=str(p.get("init_mode", "phase1")),
        )
        for p in data["phases"]
    )
    return CurriculumPlan(
        phases=phases,
        master_seed=int(data.get("master_seed", 0)),
        output_dir=str(data.get("output_dir", "runs/curriculum")),
    )


def save_plan(plan: CurriculumPlan, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plan_to_dict(plan), f, indent=2, sort_keys=True)
        f.write("\n")


def load_plan(path: str) -> CurriculumPlan:
    with open(path, "r", encoding="utf-8") as f:
        return plan_from_dict(json.load(f))
