"""Command-line entry point.

Subcommands: simulate one rollout, train a single phase or the whole
curriculum, evaluate an agent over multiple rollouts, rebuild a metrics
report from exported trajectory CSVs, and run the gradient self-check.

Every command is deterministic given its full flag set. Seed precedence:
``--seed`` flag, then the BINYARD_SEED environment variable, then the
value stored in the plan file (train commands) or 0. Exit codes: 0 on
success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import curriculum as curr
from .agents import AGENT_KINDS, make_agent
from .env import EnvConfig, write_trajectory_csv
from .evaluation import build_report, export_report, load_rollout_dir, run_rollout, run_rollouts
from .nets import (
    MLPSpec,
    backward,
    finite_difference_grads,
    forward_cached,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .plant import default_plant, load_plant
from .ppo import PPOHyperparams, write_training_log
from .rewards import precision_spec

SEED_ENV_VAR = "BINYARD_SEED"
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def _resolve_seed(flag_value: int | None, fallback: int = 0) -> int:
    if flag_value is not None:
        return flag_value
    env_value = os.environ.get(SEED_ENV_VAR)
    if env_value is not None:
        return int(env_value)
    return fallback


def _load_plant(path: str | None):
    return load_plant(path) if path else default_plant()


def _eval_env_config(plant, steps: int, timestep: float) -> EnvConfig:
    return EnvConfig(
        plant=plant,
        timestep_seconds=timestep,
        episode_length=steps,
        stochastic_fill=True,
        pu_constrained=True,
        reward_spec=precision_spec(),
        init_mode="uniform",
        eval_mode=True,
    )


def cmd_simulate(args) -> int:
    plant = _load_plant(args.plant)
    seed = _resolve_seed(args.seed)
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    agent = make_agent(args.agent, plant, checkpoint=ckpt, seed=seed)
    config = _eval_env_config(plant, args.steps, args.timestep)
    record = run_rollout(agent, config, seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trajectory.csv")
    write_trajectory_csv(path, record.trajectory_rows(), plant.n_pus)
    print(
        f"wrote {path}: {len(record)} steps, "
        f"{int(record.success.sum())} emptyings, total reward {record.total_reward:.3f}"
    )
    return 0


def _load_plan(args) -> curr.CurriculumPlan:
    plan = curr.load_plan(args.plan) if args.plan else curr.default_plan()
    seed = _resolve_seed(args.seed, fallback=plan.master_seed)
    out = args.out if args.out else plan.output_dir
    return curr.CurriculumPlan(phases=plan.phases, master_seed=seed, output_dir=out)


def cmd_train_curriculum(args) -> int:
    plan = _load_plan(args)
    plant = _load_plant(args.plant)
    plan, hp = curr.scale_for_desk_run(plan, PPOHyperparams(), args.scale)
    if args.dry_run:
        print(json.dumps(curr.plan_to_dict(plan), indent=2, sort_keys=True))
        return 0
    os.makedirs(plan.output_dir, exist_ok=True)
    curr.save_plan(plan, os.path.join(plan.output_dir, "resolved_plan.json"))
    ckpt = curr.run_curriculum(plan, plant=plant, hp=hp)
    print(
        f"curriculum complete: {len(plan.phases)} phases, "
        f"{ckpt.timesteps_trained} timesteps, checkpoints under {plan.output_dir}"
    )
    return 0


def cmd_train_phase(args) -> int:
    plan = _load_plan(args)
    if not 1 <= args.phase <= len(plan.phases):
        raise UsageError(f"--phase must be in 1..{len(plan.phases)}")
    plant = _load_plant(args.plant)
    plan, hp = curr.scale_for_desk_run(plan, PPOHyperparams(), args.scale)
    phase = plan.phases[args.phase - 1]
    incoming = load_checkpoint(args.checkpoint) if args.checkpoint else None
    os.makedirs(plan.output_dir, exist_ok=True)
    log_path = os.path.join(plan.output_dir, f"train_phase{args.phase}.csv")
    ckpt, rows = curr.run_phase(phase, plant, incoming, plan.master_seed, hp)
    write_training_log(log_path, rows)
    ckpt_path = os.path.join(plan.output_dir, f"ckpt_phase{args.phase}.bin")
    save_checkpoint(ckpt, ckpt_path)
    print(f"phase {args.phase} ({phase.name}) done: {ckpt_path}")
    return 0


def cmd_evaluate(args) -> int:
    if (args.checkpoint is None) == (args.agent is None):
        raise UsageError("provide exactly one of --checkpoint or --agent")
    plant = _load_plant(args.plant)
    seed = _resolve_seed(args.seed)
    if args.checkpoint:
        agent = make_agent("policy", plant, checkpoint=load_checkpoint(args.checkpoint), seed=seed)
    else:
        agent = make_agent(args.agent, plant, seed=seed)
    config = _eval_env_config(plant, args.episode_steps, args.timestep)
    records = run_rollouts(agent, config, args.rollouts, seed)
    report = build_report(records, plant)
    export_report(report, records, plant, args.out)
    viol = "undefined" if report.violation_percentage is None else f"{report.violation_percentage:.2f}%"
    dev = "undefined" if report.deviation_mean is None else f"{report.deviation_mean:.3f}"
    print(
        f"{args.rollouts} rollouts: {report.emptying_actions} emptying actions, "
        f"violations {viol}, mean deviation {dev}, report under {args.out}"
    )
    return 0


def cmd_report(args) -> int:
    plant = _load_plant(args.plant)
    records = load_rollout_dir(args.rollouts_dir, plant)
    report = build_report(records, plant)
    export_report(report, records, plant, args.out, include_rollouts=False)
    print(f"rebuilt report from {len(records)} trajectory files into {args.out}")
    return 0


def gradcheck(seed: int, perturb_bug: bool = False, n_nets: int = 20) -> float:
    """Max relative error between analytic and central-difference gradients
    over ``n_nets`` random small networks. ``perturb_bug`` injects a wrong
    gradient into the first network as a negative control."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_nets):
        spec = MLPSpec(
            input_dim=int(rng.integers(2, 8)),
            hidden_layers=(int(rng.integers(3, 9)), int(rng.integers(3, 9))),
            output_dim=int(rng.integers(1, 5)),
        )
        params = init_params(spec, rng)
        x = rng.standard_normal(spec.input_dim)
        g_out = rng.standard_normal(spec.output_dim)
        _, cache = forward_cached(spec, params, x)
        analytic = backward(spec, params, cache, g_out)
        if perturb_bug and k == 0:
            analytic = analytic + 1e-2
        numeric = finite_difference_grads(spec, params, x, g_out)
        denom = np.maximum(np.abs(numeric), 1.0)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst


def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args.seed)
    worst = gradcheck(seed, perturb_bug=args.perturb_bug)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"gradcheck {'PASS' if ok else 'FAIL'}: max relative error {worst:.3e}")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="binyard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one eval-mode rollout and dump its trajectory")
    p.add_argument("--plant", help="plant config JSON (default: shipped 11-container plant)")
    p.add_argument("--agent", default="do-nothing", choices=AGENT_KINDS)
    p.add_argument("--checkpoint", help="policy checkpoint (required for --agent policy)")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--timestep", type=float, default=60.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-phase", help="train one curriculum phase")
    p.add_argument("--plan", help="curriculum plan JSON (default: built-in five phases)")
    p.add_argument("--phase", type=int, required=True, help="1-based phase index")
    p.add_argument("--checkpoint", help="incoming checkpoint from the previous phase")
    p.add_argument("--plant")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_phase)

    p = sub.add_parser("train-curriculum", help="run all five phases in order")
    p.add_argument("--plan")
    p.add_argument("--plant")
    p.add_argument("--scale", type=float, default=1.0, help="multiply all phase budgets")
    p.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_curriculum)

    p = sub.add_parser("evaluate", help="aggregate metrics over eval rollouts")
    p.add_argument("--checkpoint", help="evaluate this trained policy (masked inference)")
    p.add_argument("--agent", choices=[k for k in AGENT_KINDS if k != "policy"])
    p.add_argument("--plant")
    p.add_argument("--rollouts", type=int, default=15)
    p.add_argument("--episode-steps", type=int, default=600)
    p.add_argument("--timestep", type=float, default=60.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="rebuild metrics from exported rollout CSVs")
    p.add_argument("--rollouts-dir", required=True)
    p.add_argument("--plant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    p.add_argument("--seed", type=int)
    p.add_argument("--perturb-bug", action="store_true", help="negative control: inject a bad gradient")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure contract for CI
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
