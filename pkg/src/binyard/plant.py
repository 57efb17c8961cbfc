"""Static plant description and its physical laws.

A plant is a set of containers accumulating pre-sorted material plus a set
of processing units (PUs) that transform a container's contents into
products. Containers fill by a random walk with drift; a PU is busy for an
affine function of the number of producible products in the emptied volume.

All durations are stored in seconds. Fill rates (``alpha``) and noise
levels (``noise_sigma``) are specified per canonical 60-second step; the
environment rescales them when it runs on a different timestep length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

CANONICAL_STEP_SECONDS = 60.0


@dataclass(frozen=True)
class ContainerSpec:
    """One material container.

    Attributes:
        id: container index, 1-based.
        alpha: mean volume increase per canonical 60 s step.
        noise_sigma: std dev of the per-step Gaussian fill noise.
        ideal_volume: target emptying volume (product quality peak).
        max_volume: physical bearing limit; exceeding it is a safety violation.
        allowed_pus: ids of the PUs this container may be emptied into.
    """

    id: int
    alpha: float
    noise_sigma: float
    ideal_volume: float
    max_volume: float = 40.0
    allowed_pus: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"container {self.id}: alpha must be > 0")
        if self.noise_sigma < 0:
            raise ValueError(f"container {self.id}: noise_sigma must be >= 0")
        if not 0 < self.ideal_volume < self.max_volume:
            raise ValueError(
                f"container {self.id}: need 0 < ideal_volume < max_volume"
            )
        if not self.allowed_pus:
            raise ValueError(f"container {self.id}: allowed_pus must be nonempty")


@dataclass(frozen=True)
class PUSpec:
    """One processing unit.

    ``beta``/``lam``/``product_size`` are the pair defaults used for every
    container unless overridden in ``PlantConfig.pu_params``.
    """

    id: int
    beta: float  # activation time, seconds
    lam: float  # time per product, seconds
    product_size: float  # volume units per product
    belt_count: int = 1  # concurrent emptying jobs this PU accepts

    def __post_init__(self) -> None:
        if self.beta < 0 or self.lam < 0:
            raise ValueError(f"PU {self.id}: beta and lam must be >= 0")
        if self.product_size <= 0:
            raise ValueError(f"PU {self.id}: product_size must be > 0")
        if self.belt_count not in (1, 2):
            raise ValueError(f"PU {self.id}: belt_count must be 1 or 2")


@dataclass(frozen=True)
class PUPairParams:
    """Processing parameters for one (container, PU) combination."""

    beta: float
    lam: float
    product_size: float

    def __post_init__(self) -> None:
        if self.product_size <= 0:
            raise ValueError("product_size must be > 0")


@dataclass(frozen=True)
class PlantConfig:
    """Containers, PUs, and per-pair processing parameter overrides."""

    containers: tuple[ContainerSpec, ...]
    pus: tuple[PUSpec, ...]
    pu_params: dict[tuple[int, int], PUPairParams] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pu_ids = {pu.id for pu in self.pus}
        for c in self.containers:
            missing = set(c.allowed_pus) - pu_ids
            if missing:
                raise ValueError(f"container {c.id} routes to unknown PUs {missing}")
        for (cid, pid) in self.pu_params:
            if cid not in {c.id for c in self.containers} or pid not in pu_ids:
                raise ValueError(f"pu_params references unknown pair ({cid}, {pid})")

    @property
    def n_containers(self) -> int:
        return len(self.containers)

    @property
    def n_pus(self) -> int:
        return len(self.pus)

    def container(self, cid: int) -> ContainerSpec:
        for c in self.containers:
            if c.id == cid:
                return c
        raise KeyError(f"no container with id {cid}")

    def pu(self, pid: int) -> PUSpec:
        for p in self.pus:
            if p.id == pid:
                return p
        raise KeyError(f"no PU with id {pid}")

    def pair_params(self, container_id: int, pu_id: int) -> PUPairParams:
        """Processing parameters for one container-PU pair (override or PU default)."""
        override = self.pu_params.get((container_id, pu_id))
        if override is not None:
            return override
        pu = self.pu(pu_id)
        return PUPairParams(beta=pu.beta, lam=pu.lam, product_size=pu.product_size)


def fill_step(
    volume: float,
    spec: ContainerSpec,
    noise_sample: float = 0.0,
    deterministic: bool = False,
) -> float:
    """Advance one container volume by one step of the drifting random walk.

    The caller draws ``noise_sample`` from Normal(0, noise_sigma^2); it is
    ignored in deterministic mode. The result is clamped at zero.
    """
    eps = 0.0 if deterministic else noise_sample
    return max(0.0, spec.alpha + volume + eps)


def processing_duration(
    volume: float, pair_params: PUPairParams | tuple[float, float, float]
) -> float:
    """Seconds a PU belt is occupied by emptying ``volume`` units.

    Activation time plus time-per-product times the number of producible
    products, ``floor(volume / product_size)``.
    """
    if isinstance(pair_params, tuple):
        pair_params = PUPairParams(*pair_params)
    if volume < 0:
        raise ValueError("volume must be >= 0")
    return pair_params.beta + pair_params.lam * math.floor(
        volume / pair_params.product_size
    )


# Default plant: eleven containers, two PUs. The real facility's parameters
# are proprietary, so these are synthetic but preserve the qualitative
# regimes: time-to-ideal at 60 s/step spans 50..300 steps, ideal volumes
# spread over [20, 35], noise is 10% of the drift, and odd-id containers
# route to PU-1 (one belt) while the rest route to PU-2 (two belts).
_DEFAULT_STEPS_TO_IDEAL = (50, 75, 100, 125, 150, 175, 200, 225, 250, 275, 300)
_DEFAULT_IDEALS = (20.0, 21.5, 23.0, 24.5, 26.0, 27.5, 29.0, 30.5, 32.0, 33.5, 35.0)


def default_plant() -> PlantConfig:
    """The shipped 11-container, 2-PU configuration."""
    containers = []
    for i, (steps, ideal) in enumerate(zip(_DEFAULT_STEPS_TO_IDEAL, _DEFAULT_IDEALS)):
        cid = i + 1
        alpha = ideal / steps
        containers.append(
            ContainerSpec(
                id=cid,
                alpha=alpha,
                noise_sigma=0.1 * alpha,
                ideal_volume=ideal,
                max_volume=40.0,
                allowed_pus=(1,) if cid % 2 == 1 and cid <= 9 else (2,),
            )
        )
    pus = (
        PUSpec(id=1, beta=20.0, lam=5.0, product_size=4.0, belt_count=1),
        PUSpec(id=2, beta=20.0, lam=5.0, product_size=4.0, belt_count=2),
    )
    return PlantConfig(containers=tuple(containers), pus=pus)


def reduced_plant() -> PlantConfig:
    """A 5-container, 1-PU plant for desk-scale experiments."""
    steps_to_ideal = (50, 112, 175, 237, 300)
    ideals = (20.0, 23.75, 27.5, 31.25, 35.0)
    containers = []
    for i, (steps, ideal) in enumerate(zip(steps_to_ideal, ideals)):
        alpha = ideal / steps
        containers.append(
            ContainerSpec(
                id=i + 1,
                alpha=alpha,
                noise_sigma=0.1 * alpha,
                ideal_volume=ideal,
                max_volume=40.0,
                allowed_pus=(1,),
            )
        )
    pus = (PUSpec(id=1, beta=20.0, lam=5.0, product_size=4.0, belt_count=1),)
    return PlantConfig(containers=tuple(containers), pus=pus)


# JSON round trip. Field names follow the documented schema; the PUSpec
# attribute ``lam`` maps to the JSON key "lambda" (reserved word in Python).


def plant_to_dict(plant: PlantConfig) -> dict:
    return {
        "containers": [
            {
                "id": c.id,
                "alpha": c.alpha,
                "noise_sigma": c.noise_sigma,
                "ideal_volume": c.ideal_volume,
                "max_volume": c.max_volume,
                "allowed_pus": list(c.allowed_pus),
            }
            for c in plant.containers
        ],
        "pus": [
            {
                "id": p.id,
                "beta": p.beta,
                "lambda": p.lam,
                "product_size": p.product_size,
                "belt_count": p.belt_count,
            }
            for p in plant.pus
        ],
        "pu_params": [
            {
                "container_id": cid,
                "pu_id": pid,
                "beta": pp.beta,
                "lambda": pp.lam,
                "product_size": pp.product_size,
            }
            for (cid, pid), pp in sorted(plant.pu_params.items())
        ],
    }


def plant_from_dict(data: dict) -> PlantConfig:
    containers = tuple(
        ContainerSpec(
            id=int(c["id"]),
            alpha=float(c["alpha"]),
            noise_sigma=float(c["noise_sigma"]),
            ideal_volume=float(c["ideal_volume"]),
            max_volume=float(c.get("max_volume", 40.0)),
            allowed_pus=tuple(int(x) for x in c["allowed_pus"]),
        )
        for c in data["containers"]
    )
    pus = tuple(
        PUSpec(
            id=int(p["id"]),
            beta=float(p["beta"]),
            lam=float(p["lambda"]),
            product_size=float(p["product_size"]),
            belt_count=int(p.get("belt_count", 1)),
        )
        for p in data["pus"]
    )
    pu_params = {
        (int(e["container_id"]), int(e["pu_id"])): PUPairParams(
            beta=float(e["beta"]),
            lam=float(e["lambda"]),
            product_size=float(e["product_size"]),
        )
        for e in data.get("pu_params", [])
    }
    return PlantConfig(containers=containers, pus=pus, pu_params=pu_params)


def save_plant(plant: PlantConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plant_to_dict(plant), f, indent=2, sort_keys=True)
        f.write("\n")


def load_plant(path: str) -> PlantConfig:
    with open(path, "r", encoding="utf-8") as f:
        return plant_from_dict(json.load(f))
