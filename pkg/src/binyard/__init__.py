"""Waste-sorting plant simulator, curriculum-trained PPO controller, and
evaluation harness."""

from .agents import AnalyticAgent, AnalyticConfig, DoNothingAgent, PolicyAgent, RandomAgent
from .curriculum import CurriculumPlan, PhaseConfig, default_plan, run_curriculum, run_phase
from .env import ContainerEnv, EnvConfig, EnvState, StepOutcome
from .nets import MLPSpec, ParamSet, PolicyCheckpoint, load_checkpoint, save_checkpoint
from .plant import (
    ContainerSpec,
    PlantConfig,
    PUSpec,
    default_plant,
    fill_step,
    load_plant,
    processing_duration,
    reduced_plant,
    save_plant,
)
from .ppo import PPOHyperparams, train
from .rewards import (
    RewardSpec,
    compose_reward,
    cumulative_positional,
    gaussian_reward,
    positional_reward,
    precision_reward,
    termination_reward,
)
from .evaluation import build_report, export_report, run_rollouts

__version__ = "0.1.0"
