"""Planted-factor simulator of model performance across devices.

Every entity gets latent factors and the true metric values follow simple
monotone laws, evaluated for model ``m`` on hardware ``h`` at batch size ``b``:

    latency_ms  = speed_h * cost_m * exp(gamma * <u_m, v_h>) * (b + 4) / 36
    memory_mb   = weights_mb_m * (1 + b / 32) / 2
    power_w     = base_power_h * (1 + load_m)
    cpu_temp_c  = ambient_h + 2.5 * power_w
    accuracy    = acc[t, m]   (0.55 + 0.4 * sigmoid(2 <z_t, u_m>), spread apart)

``gamma`` is the world's ``interaction_strength``.  With ``gamma = 0`` every
hardware law is a per-device constant times a per-model constant, so model
orderings do not depend on the device.  Batch dependence is a shared factor
(1 at b = 32), so any mix of batch sizes preserves model orderings.
Per-task accuracies are spread at least ``min_accuracy_gap`` apart so that a
finite dataset's tally cannot reorder them.

Measurement noise is multiplicative log-normal with scale ``noise_sigma`` on
hardware metrics and additive Gaussian on per-batch accuracy.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass
from typing import Any, Callable, Mapping, TypeVar

import numpy as np

from hwrec.domain import HardwareProfile, MetricKind, ModelCard, TaskDescriptor, WeightConfig
from hwrec.harness import WorkResult
from hwrec.metrics import DEFAULT_COMPOSITE, CompositeSpec, carbon_footprint
from hwrec.ranking import GroundTruthRanking, rank_by_copeland

T = TypeVar("T")

ARCHITECTURES = ("mobilenet", "efficientnet", "resnet", "transformer")
# relative compute per parameter and extra power draw per family
ARCH_COST = {"mobilenet": 0.6, "efficientnet": 0.8, "resnet": 1.0, "transformer": 1.5}
ARCH_POWER = {"mobilenet": 0.05, "efficientnet": 0.1, "resnet": 0.15, "transformer": 0.3}
CPU_MODELS = ("ARM Cortex-A53", "ARM Cortex-A72", "ARM Cortex-A76", "Intel Atom x5", "Intel Core i5")
ACCELERATORS = (None, None, "coral-tpu", "npu")
FIXED_BATCH = 32


def category_buckets(values, buckets: int = 16) -> list[float]:
    """Hash categorical strings into a ``buckets``-wide count vector (stable across runs)."""
    out = [0.0] * buckets
    for v in values:
        if v:
            out[zlib.crc32(str(v).encode()) % buckets] += 1.0
    return out


def hardware_features(
    cpu_model: str,
    cpu_cores: int,
    cpu_freq_mhz: float,
    ram_mb: float,
    storage_mb: float,
    accelerator: str | None = None,
    latent=(),
    buckets: int = 16,
) -> list[float]:
    """Default hardware encoding: bias, latent factors, scaled specs, hashed categoricals."""
    specs = [
        cpu_cores / 8.0,
        cpu_freq_mhz / 2000.0,
        math.log2(ram_mb / 1024.0) / 4.0,
        math.log2(storage_mb / 1024.0) / 8.0,
    ]
    cats = category_buckets([cpu_model, f"acc:{accelerator}" if accelerator else None], buckets)
    return [1.0, *map(float, latent), *specs, *cats]


def task_features(num_classes: int, num_samples: int, input_shape, latent=()) -> list[float]:
    """Default task encoding: bias, latent dataset statistics, class count, size, input shape."""
    shape = list(input_shape)[:3] + [1] * (3 - min(3, len(input_shape)))
    return [
        1.0,
        *map(float, latent),
        math.log(num_classes) / math.log(1000.0),
        math.log10(num_samples) / 5.0,
        shape[0] / 3.0,
        shape[1] / 224.0,
        shape[2] / 224.0,
    ]


def model_features(param_count: int, architecture: str, latent=()) -> list[float]:
    onehot = [1.0 if architecture == a else 0.0 for a in ARCHITECTURES]
    return [math.log10(param_count) - 7.0, *onehot, *map(float, latent)]


@dataclass(frozen=True)
class WorldSpec:
    n_models: int = 6
    n_hardware: int = 3
    n_tasks: int = 3
    dims: int = 3
    seed: int = 0
    noise_sigma: float = 0.0
    interaction_strength: float = 0.0
    samples_per_task: int = 64
    hash_buckets: int = 16
    min_accuracy_gap: float = 0.02

    def __post_init__(self) -> None:
        for name in ("n_models", "n_hardware", "n_tasks", "dims", "samples_per_task", "hash_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.min_accuracy_gap < 0:
            raise ValueError("min_accuracy_gap must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WorldSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown world spec fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ModelLatent:
    u: tuple[float, ...]
    cost_ms: float
    weights_mb: float
    load: float


@dataclass(frozen=True)
class HardwareLatent:
    v: tuple[float, ...]
    speed: float
    base_power_w: float
    ambient_c: float


@dataclass(frozen=True)
class PlantedWorld:
    spec: WorldSpec
    models: tuple[ModelCard, ...]
    hardware: tuple[HardwareProfile, ...]
    tasks: tuple[TaskDescriptor, ...]
    model_latent: dict[str, ModelLatent]
    hardware_latent: dict[str, HardwareLatent]
    task_latent: dict[str, tuple[float, ...]]
    accuracy: dict[str, dict[str, float]]  # task id -> model id -> accuracy

    @property
    def seed(self) -> int:
        return self.spec.seed

    @property
    def noise_sigma(self) -> float:
        return self.spec.noise_sigma

    @property
    def interaction_strength(self) -> float:
        return self.spec.interaction_strength

    def index(self, kind: str, entity_id: str) -> int:
        items = {"model": self.models, "hardware": self.hardware, "task": self.tasks}[kind]
        for i, item in enumerate(items):
            if item.id == entity_id:
                return i
        raise KeyError(f"unknown {kind} id {entity_id!r}")

    def model(self, model_id: str) -> ModelCard:
        return self.models[self.index("model", model_id)]

    def hw(self, hardware_id: str) -> HardwareProfile:
        return self.hardware[self.index("hardware", hardware_id)]

    def task(self, task_id: str) -> TaskDescriptor:
        return self.tasks[self.index("task", task_id)]

    # -- latent laws -------------------------------------------------------

    def latency_ms(self, model_id: str, hardware_id: str, batch_size: int = FIXED_BATCH) -> float:
        m, h = self.model_latent[model_id], self.hardware_latent[hardware_id]
        interaction = self.interaction_strength * float(np.dot(m.u, h.v))
        return h.speed * m.cost_ms * math.exp(interaction) * (batch_size + 4) / 36.0

    def memory_mb(self, model_id: str, batch_size: int = FIXED_BATCH) -> float:
        return self.model_latent[model_id].weights_mb * (1.0 + batch_size / 32.0) / 2.0

    def power_w(self, model_id: str, hardware_id: str) -> float:
        return self.hardware_latent[hardware_id].base_power_w * (1.0 + self.model_latent[model_id].load)

    def cpu_temp_c(self, model_id: str, hardware_id: str) -> float:
        return self.hardware_latent[hardware_id].ambient_c + 2.5 * self.power_w(model_id, hardware_id)

    def true_accuracy(self, task_id: str, model_id: str) -> float:
        return self.accuracy[task_id][model_id]

    def true_metrics(
        self, model_id: str, task_id: str, hardware_id: str, composite: CompositeSpec = DEFAULT_COMPOSITE
    ) -> dict[MetricKind, float]:
        """Noiseless metric values at the fixed batch size."""
        for kind, key in (("model", model_id), ("task", task_id), ("hardware", hardware_id)):
            self.index(kind, key)
        out = {
            MetricKind.EXECUTION_TIME_MS: self.latency_ms(model_id, hardware_id),
            MetricKind.MEMORY_MB: self.memory_mb(model_id),
            MetricKind.POWER_W: self.power_w(model_id, hardware_id),
            MetricKind.CPU_TEMP_C: self.cpu_temp_c(model_id, hardware_id),
        }
        out[MetricKind.CARBON_FOOTPRINT] = carbon_footprint(out, composite)
        out[MetricKind.ACCURACY] = self.true_accuracy(task_id, model_id)
        return out

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": asdict(self.spec),
            "models": [m.to_dict() for m in self.models],
            "hardware": [h.to_dict() for h in self.hardware],
            "tasks": [t.to_dict() for t in self.tasks],
            "model_latent": {k: asdict(v) for k, v in self.model_latent.items()},
            "hardware_latent": {k: asdict(v) for k, v in self.hardware_latent.items()},
            "task_latent": {k: list(v) for k, v in self.task_latent.items()},
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PlantedWorld:
        return cls(
            spec=WorldSpec(**data["spec"]),
            models=tuple(ModelCard.from_dict(m) for m in data["models"]),
            hardware=tuple(HardwareProfile.from_dict(h) for h in data["hardware"]),
            tasks=tuple(TaskDescriptor.from_dict(t) for t in data["tasks"]),
            model_latent={
                k: ModelLatent(tuple(v["u"]), v["cost_ms"], v["weights_mb"], v["load"])
                for k, v in data["model_latent"].items()
            },
            hardware_latent={
                k: HardwareLatent(tuple(v["v"]), v["speed"], v["base_power_w"], v["ambient_c"])
                for k, v in data["hardware_latent"].items()
            },
            task_latent={k: tuple(v) for k, v in data["task_latent"].items()},
            accuracy={t: dict(row) for t, row in data["accuracy"].items()},
        )


def _spread(values: np.ndarray, gap: float, low: float = 0.55, high: float = 0.995) -> np.ndarray:
    """Push sorted values at least ``gap`` apart, staying order-preserving and inside [low, high]."""
    n = len(values)
    if n < 2 or gap == 0:
        return values
    gap = min(gap, (high - low) / (n - 1))
    order = np.argsort(values, kind="stable")
    spread = values[order].copy()
    for i in range(1, n):
        spread[i] = max(spread[i], spread[i - 1] + gap)
    if spread[-1] > high:
        # shift down from the top, keeping gaps
        for i in range(n - 1, -1, -1):
            cap = high if i == n - 1 else spread[i + 1] - gap
            spread[i] = min(spread[i], cap)
    out = np.empty(n)
    out[order] = spread
    return out


def generate_world(spec: WorldSpec | Mapping[str, Any]) -> PlantedWorld:
    if not isinstance(spec, WorldSpec):
        spec = WorldSpec.from_dict(spec)
    rng = np.random.default_rng(spec.seed)
    k = spec.dims

    models, model_latent = [], {}
    for i in range(spec.n_models):
        arch = ARCHITECTURES[int(rng.integers(len(ARCHITECTURES)))]
        params = int(10 ** rng.uniform(5.5, 8.0))
        u = tuple(float(x) for x in rng.normal(0.0, 1.0, k))
        mid = f"m{i}"
        models.append(
            ModelCard(
                id=mid,
                name=f"{arch}-{params // 1000}k",
                architecture_family=arch,
                param_count=params,
                model_features=model_features(params, arch, u),
                source_task="imagenet",
            )
        )
        model_latent[mid] = ModelLatent(
            u=u,
            cost_ms=params / 1e6 * ARCH_COST[arch],
            weights_mb=params * 4 / 2**20,
            load=0.15 * math.log10(params / 1e5) + ARCH_POWER[arch],
        )

    hardware, hardware_latent = [], {}
    for i in range(spec.n_hardware):
        cpu = CPU_MODELS[int(rng.integers(len(CPU_MODELS)))]
        accel = ACCELERATORS[int(rng.integers(len(ACCELERATORS)))]
        cores = int(rng.choice([1, 2, 4, 8]))
        freq = float(rng.uniform(600.0, 3000.0))
        ram = float(2 ** rng.integers(9, 14))
        storage = float(2 ** rng.integers(13, 18))
        v = tuple(float(x) for x in rng.normal(0.0, 1.0, k))
        hid = f"hw{i}"
        hardware.append(
            HardwareProfile(
                id=hid,
                device_name=f"device-{i}",
                cpu_model=cpu,
                cpu_cores=cores,
                cpu_freq_mhz=freq,
                ram_mb=ram,
                storage_mb=storage,
                accelerator=accel,
                hw_features=hardware_features(cpu, cores, freq, ram, storage, accel, v, spec.hash_buckets),
            )
        )
        hardware_latent[hid] = HardwareLatent(
            v=v,
            speed=(1500.0 / freq) * math.sqrt(4.0 / cores) * (0.5 if accel else 1.0),
            base_power_w=float(rng.uniform(2.0, 6.0)),
            ambient_c=float(rng.uniform(25.0, 35.0)),
        )

    tasks, task_latent, accuracy = [], {}, {}
    for i in range(spec.n_tasks):
        z = tuple(float(x) for x in rng.normal(0.0, 1.0, k))
        classes = int(rng.choice([2, 10, 100]))
        shape = (3, 32, 32) if rng.random() < 0.5 else (3, 224, 224)
        tid = f"t{i}"
        tasks.append(
            TaskDescriptor(
                id=tid,
                dataset_name=f"dataset-{i}",
                num_classes=classes,
                num_samples=spec.samples_per_task,
                input_shape=shape,
                task_features=task_features(classes, spec.samples_per_task, shape, z),
            )
        )
        task_latent[tid] = z
        raw = np.array([
            0.55 + 0.4 / (1.0 + math.exp(-2.0 * float(np.dot(z, model_latent[m.id].u)) / math.sqrt(k)))
            for m in models
        ])
        spread = _spread(raw, spec.min_accuracy_gap)
        accuracy[tid] = {m.id: float(a) for m, a in zip(models, spread)}

    return PlantedWorld(
        spec=spec,
        models=tuple(models),
        hardware=tuple(hardware),
        tasks=tuple(tasks),
        model_latent=model_latent,
        hardware_latent=hardware_latent,
        task_latent=task_latent,
        accuracy=accuracy,
    )


# ---------------------------------------------------------------------------
# Harness adapters
# ---------------------------------------------------------------------------


class SyntheticSensors:
    """Sensors of one simulated device; readings reflect the workload that last ran on it."""

    IDLE_CPU = 0.05
    IDLE_RAM = 0.25

    def __init__(self, world: PlantedWorld, hardware_id: str):
        world.index("hardware", hardware_id)
        self.world = world
        self.hardware_id = hardware_id
        self.active: SyntheticWorkload | None = None

    def cpu_util(self) -> float:
        return self.IDLE_CPU

    def ram_util(self) -> float:
        return self.IDLE_RAM

    def cpu_temp_c(self) -> float:
        if self.active is None:
            return self.world.hardware_latent[self.hardware_id].ambient_c
        return self.world.cpu_temp_c(self.active.model_id, self.hardware_id)

    def power_w(self) -> float:
        if self.active is None:
            return self.world.hardware_latent[self.hardware_id].base_power_w
        w = self.active
        return w.noisy(self.world.power_w(w.model_id, self.hardware_id))

    def peak_memory_mb(self, during: Callable[[], T]) -> tuple[T, float]:
        result = during()
        w = self.active
        if w is None:
            return result, 0.0
        return result, w.noisy(self.world.memory_mb(w.model_id, w.last_batch))


class SyntheticWorkload:
    """Forward passes whose latency and accuracy follow the world's laws."""

    def __init__(self, world: PlantedWorld, model_id: str, task_id: str, sensors: SyntheticSensors):
        self.world = world
        self.model_id = model_id
        self.task_id = task_id
        self.hardware_id = sensors.hardware_id
        self.sensors = sensors
        self.description = f"synthetic {model_id} on {task_id} @ {sensors.hardware_id}"
        idx = [world.seed, world.index("model", model_id), world.index("task", task_id),
               world.index("hardware", sensors.hardware_id)]
        self._rng = np.random.default_rng(np.random.SeedSequence(idx))
        self._owed = 0.0
        self.last_batch = FIXED_BATCH

    def noisy(self, value: float) -> float:
        sigma = self.world.noise_sigma
        if sigma == 0:
            return value
        return value * math.exp(sigma * float(self._rng.normal()))

    def forward(self, batch_size: int) -> WorkResult:
        self.sensors.active = self
        self.last_batch = batch_size
        latency = self.noisy(self.world.latency_ms(self.model_id, self.hardware_id, batch_size))
        p = self.world.true_accuracy(self.task_id, self.model_id)
        if self.world.noise_sigma:
            p = min(1.0, max(0.0, p + self.world.noise_sigma * float(self._rng.normal())))
        # error diffusion: the running tally tracks p * samples_seen to within one sample
        self._owed += p * batch_size
        correct = min(batch_size, max(0, int(math.floor(self._owed + 0.5))))
        self._owed -= correct
        return WorkResult(latency, correct, batch_size)


def device_sensors(world: PlantedWorld, hardware_id: str) -> SyntheticSensors:
    return SyntheticSensors(world, hardware_id)


def world_workload(
    world: PlantedWorld,
    model_id: str,
    task_id: str,
    hardware_id: str,
    sensors: SyntheticSensors | None = None,
) -> tuple[SyntheticWorkload, SyntheticSensors]:
    """A workload plus the sensors of the device it runs on.

    Pass ``sensors`` to put several workloads on the same simulated device.
    """
    world.index("model", model_id)
    world.index("task", task_id)
    if sensors is None:
        sensors = SyntheticSensors(world, hardware_id)
    elif sensors.hardware_id != hardware_id:
        raise ValueError(f"sensors belong to {sensors.hardware_id}, not {hardware_id}")
    return SyntheticWorkload(world, model_id, task_id, sensors), sensors


def true_aggregates(
    world: PlantedWorld, task_id: str, hardware_id: str, composite: CompositeSpec = DEFAULT_COMPOSITE
) -> dict[str, dict[MetricKind, float]]:
    return {m.id: world.true_metrics(m.id, task_id, hardware_id, composite) for m in world.models}


def true_ranking(
    world: PlantedWorld,
    task_id: str,
    hardware_id: str,
    config: WeightConfig,
    composite: CompositeSpec = DEFAULT_COMPOSITE,
) -> GroundTruthRanking:
    """Oracle ranking: weighted Copeland over the noiseless metric laws."""
    table = rank_by_copeland(true_aggregates(world, task_id, hardware_id, composite), config)
    return GroundTruthRanking(task_id, hardware_id, table)
