"""Rollout harness and evaluation metrics.

Rollouts always run in eval mode: overflow never ends an episode, it is
only recorded, so violation statistics over long horizons stay
measurable. Rollout seeds derive from one master seed, which makes agent
comparisons paired: two agents evaluated with the same master seed face
identical fill-noise streams.

Volume deviation is measured at the moment of each successful emptying,
|emptied volume - ideal|; the safety violation rate counts successful
emptyings above the container's physical limit as a percentage of all
emptying actions (attempts included).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .env import ContainerEnv, EnvConfig, trajectory_header, write_trajectory_csv
from .plant import PlantConfig, processing_duration


@dataclass
class RolloutRecord:
    """Step-by-step log of one evaluation episode."""

    seed: int
    actions: np.ndarray  # (T,)
    success: np.ndarray  # (T,) bool
    acted_ids: np.ndarray  # (T,) container id acted on, 0 for do-nothing
    acted_volume: np.ndarray  # (T,) decision-time volume of the acted container
    emptied_volume: np.ndarray  # (T,) volume at successful emptying, else nan
    rewards: np.ndarray  # (T,)
    volumes: np.ndarray  # (T, n) post-step volumes
    pu_free_in: np.ndarray  # (T, m) seconds until each PU frees up, post-step
    pu_consumed: np.ndarray  # (T, m) busy seconds consumed during the step
    total_reward: float = 0.0
    overflow_events: int = 0  # container-steps crossing above the limit
    mask_violations: int = 0  # actions the admissibility mask had forbidden

    def __len__(self) -> int:
        return len(self.actions)

    def trajectory_rows(self) -> list[dict]:
        rows = []
        for t in range(len(self)):
            row = {
                "step": t,
                "container_id": int(self.acted_ids[t]),
                "volume": float(self.acted_volume[t]),
                "action": int(self.actions[t]),
                "success": int(self.success[t]),
                "reward": float(self.rewards[t]),
            }
            for j in range(self.pu_free_in.shape[1]):
                row[f"pu{j + 1}_busy"] = float(self.pu_free_in[t, j])
            rows.append(row)
        return rows


def run_rollout(agent, config: EnvConfig, seed: int) -> RolloutRecord:
    """One full eval-mode episode driven by ``agent``."""
    if not config.eval_mode:
        config = replace(config, eval_mode=True)
    env = ContainerEnv(config, seed=seed)
    state, obs = env.reset()
    T, n, m = config.episode_length, config.n, config.n_pus
    max_vols = np.array([c.max_volume for c in config.plant.containers])

    rec = RolloutRecord(
        seed=seed,
        actions=np.zeros(T, dtype=np.int64),
        success=np.zeros(T, dtype=bool),
        acted_ids=np.zeros(T, dtype=np.int64),
        acted_volume=np.zeros(T),
        emptied_volume=np.full(T, np.nan),
        rewards=np.zeros(T),
        volumes=np.zeros((T, n)),
        pu_free_in=np.zeros((T, m)),
        pu_consumed=np.zeros((T, m)),
    )
    above = state.volumes > max_vols
    for t in range(T):
        mask = env.action_mask()
        action = int(agent.act(obs, mask, state))
        if not mask[action]:
            rec.mask_violations += 1
        decision_volume = float(state.volumes[action - 1]) if action > 0 else 0.0
        outcome = env.step(action)

        rec.actions[t] = action
        rec.success[t] = outcome.info["action_success"]
        rec.acted_ids[t] = outcome.info["acted_container"]
        rec.acted_volume[t] = decision_volume
        if outcome.info["action_success"]:
            rec.emptied_volume[t] = outcome.info["emptied_volume"]
        rec.rewards[t] = outcome.reward
        rec.volumes[t] = state.volumes
        rec.pu_free_in[t] = state.pu_free_in
        rec.pu_consumed[t] = outcome.info["pu_busy_consumed"]

        now_above = state.volumes > max_vols
        rec.overflow_events += int((now_above & ~above).sum())
        above = now_above
        obs = outcome.observation
    rec.total_reward = float(rec.rewards.sum())
    return rec


def run_rollouts(agent, config: EnvConfig, count: int, seed: int) -> list[RolloutRecord]:
    """``count`` independent eval rollouts with seeds derived from ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]
    return [run_rollout(agent, config, s) for s in seeds]


@dataclass
class ContainerStats:
    emptyings: int
    deviation_mean: float | None  # |emptied - ideal|, None when never emptied
    deviation_pct_of_ideal: float | None
    violations: int
    emptied_volumes: list[float] = field(default_factory=list)


@dataclass
class MetricsReport:
    rollouts: int
    steps_per_rollout: int
    emptying_actions: int  # attempts, action > 0
    successful_emptyings: int
    deviation_mean: float | None
    deviation_std: float | None
    violation_percentage: float | None
    non_violation_percentage: float | None
    violating_actions: int
    overflow_events: int
    mask_violations: int
    pu_busy_seconds: dict[int, float]
    total_busy_seconds: float
    per_container: dict[int, ContainerStats]


def _ideal_of(plant: PlantConfig) -> dict[int, float]:
    return {c.id: c.ideal_volume for c in plant.containers}


def _max_of(plant: PlantConfig) -> dict[int, float]:
    return {c.id: c.max_volume for c in plant.containers}


def collect_emptyings(records: list[RolloutRecord]) -> list[tuple[int, float]]:
    """(container id, emptied volume) for every successful emptying."""
    out = []
    for rec in records:
        for t in np.flatnonzero(rec.success):
            out.append((int(rec.acted_ids[t]), float(rec.emptied_volume[t])))
    return out


def volume_deviation(
    records: list[RolloutRecord], plant: PlantConfig
) -> tuple[float | None, float | None, dict[int, ContainerStats]]:
    """Mean and population std of |emptied - ideal|, plus per-container stats.

    Returns (None, None, ...) when there are no successful emptyings; the
    undefined case is explicit rather than reported as zero.
    """
    ideals = _ideal_of(plant)
    maxes = _max_of(plant)
    emptyings = collect_emptyings(records)
    per: dict[int, ContainerStats] = {}
    for c in plant.containers:
        vols = [v for cid, v in emptyings if cid == c.id]
        devs = [abs(v - ideals[c.id]) for v in vols]
        per[c.id] = ContainerStats(
            emptyings=len(vols),
            deviation_mean=float(np.mean(devs)) if devs else None,
            deviation_pct_of_ideal=(
                float(100.0 * np.mean(devs) / ideals[c.id]) if devs else None
            ),
            violations=sum(1 for v in vols if v > maxes[c.id]),
            emptied_volumes=vols,
        )
    all_devs = [abs(v - ideals[cid]) for cid, v in emptyings]
    if not all_devs:
        return None, None, per
    return float(np.mean(all_devs)), float(np.std(all_devs)), per


def safety_violation_rate(
    records: list[RolloutRecord], plant: PlantConfig
) -> tuple[float | None, int, int]:
    """(percentage, violating count, attempt count) over all records.

    Percentage is None when no emptying action was ever attempted.
    """
    maxes = _max_of(plant)
    attempts = sum(int((rec.actions > 0).sum()) for rec in records)
    violating = sum(
        1 for cid, v in collect_emptyings(records) if v > maxes[cid]
    )
    if attempts == 0:
        return None, 0, 0
    return 100.0 * violating / attempts, violating, attempts


def pu_utilization(records: list[RolloutRecord], plant: PlantConfig) -> tuple[dict[int, float], float]:
    """Busy seconds consumed per PU, summed over all records, plus the total."""
    per_pu = {pu.id: 0.0 for pu in plant.pus}
    for rec in records:
        sums = rec.pu_consumed.sum(axis=0)
        for j, pu in enumerate(plant.pus):
            per_pu[pu.id] += float(sums[j])
    return per_pu, float(sum(per_pu.values()))


def ecdf(values) -> np.ndarray:
    """Right-continuous empirical CDF as rows of (value, cumulative fraction).

    Duplicates merge into a single step; the last fraction is exactly 1.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("ecdf of empty input")
    uniq, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / values.size
    fractions[-1] = 1.0
    return np.column_stack([uniq, fractions])


def build_report(records: list[RolloutRecord], plant: PlantConfig) -> MetricsReport:
    dev_mean, dev_std, per = volume_deviation(records, plant)
    pct, violating, attempts = safety_violation_rate(records, plant)
    per_pu, total_busy = pu_utilization(records, plant)
    return MetricsReport(
        rollouts=len(records),
        steps_per_rollout=len(records[0]) if records else 0,
        emptying_actions=attempts,
        successful_emptyings=sum(int(rec.success.sum()) for rec in records),
        deviation_mean=dev_mean,
        deviation_std=dev_std,
        violation_percentage=pct,
        non_violation_percentage=None if pct is None else 100.0 - pct,
        violating_actions=violating,
        overflow_events=sum(rec.overflow_events for rec in records),
        mask_violations=sum(rec.mask_violations for rec in records),
        pu_busy_seconds=per_pu,
        total_busy_seconds=total_busy,
        per_container=per,
    )


def metrics_header(plant: PlantConfig) -> list[str]:
    return [
        "rollouts",
        "steps_per_rollout",
        "emptying_actions",
        "successful_emptyings",
        "deviation_mean",
        "deviation_std",
        "violation_percentage",
        "violating_actions",
        "overflow_events",
        *[f"pu{pu.id}_busy_seconds" for pu in plant.pus],
        "total_busy_seconds",
    ]


def _fmt(x) -> str:
    return "" if x is None else repr(x) if isinstance(x, float) else str(x)


def export_report(
    report: MetricsReport,
    records: list[RolloutRecord],
    plant: PlantConfig,
    out_dir: str,
    include_rollouts: bool = True,
) -> None:
    """Write metrics.csv, report.json, one ECDF table per container, and one
    trajectory CSV per rollout. Reruns on identical inputs are byte-identical."""
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(metrics_header(plant))
        if report.rollouts > 0:
            writer.writerow(
                [
                    _fmt(report.rollouts),
                    _fmt(report.steps_per_rollout),
                    _fmt(report.emptying_actions),
                    _fmt(report.successful_emptyings),
                    _fmt(report.deviation_mean),
                    _fmt(report.deviation_std),
                    _fmt(report.violation_percentage),
                    _fmt(report.violating_actions),
                    _fmt(report.overflow_events),
                    *[_fmt(report.pu_busy_seconds[pu.id]) for pu in plant.pus],
                    _fmt(report.total_busy_seconds),
                ]
            )

    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")

    for c in plant.containers:
        path = os.path.join(out_dir, f"ecdf_{c.id}.csv")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["volume", "cumulative_fraction"])
            vols = report.per_container[c.id].emptied_volumes
            if vols:
                for v, frac in ecdf(vols):
                    writer.writerow([repr(float(v)), repr(float(frac))])

    if include_rollouts:
        for k, rec in enumerate(records):
            write_trajectory_csv(
                os.path.join(out_dir, f"rollout_{k}.csv"), rec.trajectory_rows(), plant.n_pus
            )


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "rollouts": report.rollouts,
        "steps_per_rollout": report.steps_per_rollout,
        "emptying_actions": report.emptying_actions,
        "successful_emptyings": report.successful_emptyings,
        "deviation_mean": report.deviation_mean,
        "deviation_std": report.deviation_std,
        "violation_percentage": report.violation_percentage,
        "non_violation_percentage": report.non_violation_percentage,
        "violating_actions": report.violating_actions,
        "overflow_events": report.overflow_events,
        "mask_violations": report.mask_violations,
        "pu_busy_seconds": {str(k): v for k, v in report.pu_busy_seconds.items()},
        "total_busy_seconds": report.total_busy_seconds,
        "per_container": {
            str(cid): {
                "emptyings": s.emptyings,
                "deviation_mean": s.deviation_mean,
                "deviation_pct_of_ideal": s.deviation_pct_of_ideal,
                "violations": s.violations,
            }
            for cid, s in report.per_container.items()
        },
    }


# Round trip: rebuild enough of the records from exported trajectory CSVs to
# recompute decision-quality metrics. PU utilization is reconstructed from
# committed processing durations, attributing each job to the container's
# first allowed PU (exact whenever containers route to a single PU, as in
# the shipped plants).


def load_trajectory_csv(path: str, plant: PlantConfig) -> RolloutRecord:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        expected = trajectory_header(plant.n_pus)
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected columns {expected}, got {reader.fieldnames}")
        rows = list(reader)
    T, n, m = len(rows), plant.n_containers, plant.n_pus
    rec = RolloutRecord(
        seed=-1,
        actions=np.zeros(T, dtype=np.int64),
        success=np.zeros(T, dtype=bool),
        acted_ids=np.zeros(T, dtype=np.int64),
        acted_volume=np.zeros(T),
        emptied_volume=np.full(T, np.nan),
        rewards=np.zeros(T),
        volumes=np.full((T, n), np.nan),  # full volume history is not exported
        pu_free_in=np.zeros((T, m)),
        pu_consumed=np.zeros((T, m)),
    )
    for t, row in enumerate(rows):
        rec.actions[t] = int(row["action"])
        rec.success[t] = row["success"] == "1"
        rec.acted_ids[t] = int(row["container_id"])
        rec.acted_volume[t] = float(row["volume"])
        if rec.success[t]:
            rec.emptied_volume[t] = rec.acted_volume[t]
        rec.rewards[t] = float(row["reward"])
        for j in range(m):
            rec.pu_free_in[t, j] = float(row[f"pu{j + 1}_busy"])
        if rec.success[t]:
            cid = int(rec.acted_ids[t])
            pu_id = plant.container(cid).allowed_pus[0]
            j = [pu.id for pu in plant.pus].index(pu_id)
            rec.pu_consumed[t, j] = processing_duration(
                rec.emptied_volume[t], plant.pair_params(cid, pu_id)
            )
    rec.total_reward = float(rec.rewards.sum())
    return rec


def load_rollout_dir(path: str, plant: PlantConfig) -> list[RolloutRecord]:
    names = sorted(
        (f for f in os.listdir(path) if f.startswith("rollout_") and f.endswith(".csv")),
        key=lambda f: int(f[len("rollout_") : -len(".csv")]),
    )
    if not names:
        raise FileNotFoundError(f"no rollout_<k>.csv files under {path}")
    return [load_trajectory_csv(os.path.join(path, f), plant) for f in names]
