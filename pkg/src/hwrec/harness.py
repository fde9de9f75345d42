"""Benchmark harness for (fine-tuned model, dataset) pairs.

The procedure per device:

    stabilize()
    for each (dataset, model) pair:
        for batch_size in 1..100: sample a batch, forward pass, measure
        at batch_size 32: every batch of the dataset, forward pass, measure
        stabilize()

``stabilize`` waits until CPU and RAM utilisation are at a nominal level and
the CPU temperature is inside a configured range, so one measurement does not
bleed into the next.  Workloads and sensors are pluggable: real devices, the
synthetic world in :mod:`hwrec.synthgen`, or scripted fixtures.
"""

from __future__ import annotations

import logging
import math
import os
import time
import tracemalloc
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Protocol, Sequence, TypeVar, runtime_checkable

import numpy as np

from hwrec.domain import BenchmarkRecord, HardwareProfile, MetricKind, Phase, TaskDescriptor, utc_now
from hwrec.metrics import DEFAULT_COMPOSITE, CompositeSpec, carbon_footprint, classification_metrics

logger = logging.getLogger(__name__)

T = TypeVar("T")

SWEEP_SIZES = range(1, 101)
FIXED_BATCH_SIZE = 32
SENSOR_ENV = "HWREC_SENSOR"


class SensorError(RuntimeError):
    def __init__(self, sensor: str, message: str):
        super().__init__(f"sensor {sensor!r} failed: {message}")
        self.sensor = sensor


class WorkloadFailure(RuntimeError):
    """A forward pass failed; ``partial`` holds the records measured before it."""

    def __init__(self, phase: Phase, batch_index: int, batch_size: int, cause: BaseException, partial=()):
        super().__init__(f"{phase.value} batch #{batch_index} (size {batch_size}) failed: {cause}")
        self.phase = phase
        self.batch_index = batch_index
        self.batch_size = batch_size
        self.cause = cause
        self.partial: list[BenchmarkRecord] = list(partial)


@dataclass(frozen=True)
class WorkResult:
    """Outcome of one forward pass.

    ``latency_ms`` may be ``None``, in which case the harness uses the wall
    time of the call.  ``confusion`` (rows actual, columns predicted) enables
    precision/recall/F1; otherwise only accuracy is derived from the tallies.
    """

    latency_ms: float | None
    correct: int
    total: int
    confusion: Any = None


@runtime_checkable
class Workload(Protocol):
    model_id: str
    description: str

    def forward(self, batch_size: int) -> WorkResult: ...


@runtime_checkable
class SensorProvider(Protocol):
    def cpu_util(self) -> float: ...

    def ram_util(self) -> float: ...

    def cpu_temp_c(self) -> float: ...

    def power_w(self) -> float: ...

    def peak_memory_mb(self, during: Callable[[], T]) -> tuple[T, float]:
        """Run ``during`` and return its result with the memory high-water mark above baseline."""
        ...


@dataclass(frozen=True)
class StabilizePolicy:
    max_cpu_util: float = 0.20
    max_ram_util: float = 0.80
    temp_range_c: tuple[float, float] = (0.0, 70.0)
    poll_interval_ms: int = 100
    timeout_ms: int = 10_000

    def __post_init__(self) -> None:
        low, high = self.temp_range_c
        object.__setattr__(self, "temp_range_c", (float(low), float(high)))
        if not low < high:
            raise ValueError(f"temp_range_c must satisfy low < high, got {self.temp_range_c}")
        for name in ("max_cpu_util", "max_ram_util"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.poll_interval_ms <= 0 or self.timeout_ms <= 0:
            raise ValueError("poll_interval_ms and timeout_ms must be > 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_cpu_util": self.max_cpu_util,
            "max_ram_util": self.max_ram_util,
            "temp_range_c": list(self.temp_range_c),
            "poll_interval_ms": self.poll_interval_ms,
            "timeout_ms": self.timeout_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StabilizePolicy:
        kwargs = dict(data)
        if "temp_range_c" in kwargs:
            kwargs["temp_range_c"] = tuple(kwargs["temp_range_c"])
        return cls(**kwargs)


@dataclass(frozen=True)
class StabilizeOutcome:
    stabilized: bool
    waited_ms: int
    polls: int
    last_readings: dict[str, float]


def _read(sensors: SensorProvider, name: str, fraction: bool = False) -> float:
    try:
        value = float(getattr(sensors, name)())
    except SensorError:
        raise
    except Exception as exc:
        raise SensorError(name, str(exc)) from exc
    if not math.isfinite(value):
        raise SensorError(name, f"non-finite reading {value}")
    if fraction and not 0.0 <= value <= 1.0:
        raise SensorError(name, f"reading {value} outside [0, 1]")
    return value


def stabilize(
    sensors: SensorProvider,
    policy: StabilizePolicy,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> StabilizeOutcome:
    """Poll until CPU, RAM and temperature are nominal, or the timeout elapses."""
    start = clock()
    low, high = policy.temp_range_c
    polls = 0
    while True:
        readings = {
            "cpu_util": _read(sensors, "cpu_util", fraction=True),
            "ram_util": _read(sensors, "ram_util", fraction=True),
            "cpu_temp_c": _read(sensors, "cpu_temp_c"),
        }
        polls += 1
        waited_ms = int(round((clock() - start) * 1000))
        nominal = (
            readings["cpu_util"] <= policy.max_cpu_util
            and readings["ram_util"] <= policy.max_ram_util
            and low <= readings["cpu_temp_c"] <= high
        )
        if nominal:
            return StabilizeOutcome(True, waited_ms, polls, readings)
        if waited_ms >= policy.timeout_ms:
            logger.warning("stabilize timed out after %d ms: %s", waited_ms, readings)
            return StabilizeOutcome(False, waited_ms, polls, readings)
        remaining_ms = policy.timeout_ms - waited_ms
        sleep(min(policy.poll_interval_ms, remaining_ms) / 1000.0)


class RunIds(NamedTuple):
    model_id: str
    task_id: str
    hardware_id: str


def batch_schedule(dataset_size: int, batch_size: int = FIXED_BATCH_SIZE) -> list[int]:
    """Batch sizes covering the whole dataset; the last batch holds any remainder."""
    if dataset_size < 1:
        raise ValueError(f"dataset is empty (size {dataset_size})")
    full, rest = divmod(dataset_size, batch_size)
    return [batch_size] * full + ([rest] if rest else [])


@dataclass
class PairSummary:
    model_id: str
    task_id: str
    records: int = 0
    mean_latency_ms_b32: float = float("nan")
    peak_memory_mb: float = float("nan")
    mean_power_w: float = float("nan")
    accuracy: float = float("nan")
    stabilized: bool = True
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["failed"] = self.failed
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in out.items()}


@dataclass
class RunReport:
    hardware_id: str
    pairs: list[PairSummary] = field(default_factory=list)
    records: list[BenchmarkRecord] = field(default_factory=list)
    stabilize_calls: int = 0

    @property
    def failed(self) -> list[PairSummary]:
        return [p for p in self.pairs if p.failed]

    def to_dict(self) -> dict[str, Any]:
        return {
            "hardware_id": self.hardware_id,
            "records": len(self.records),
            "stabilize_calls": self.stabilize_calls,
            "pairs": [p.to_dict() for p in self.pairs],
        }

    def to_text(self) -> str:
        head = ("model", "task", "records", "lat@32 ms", "peak MB", "power W", "accuracy", "status")
        rows = [head]
        for p in self.pairs:
            rows.append((
                p.model_id,
                p.task_id,
                str(p.records),
                f"{p.mean_latency_ms_b32:.3f}",
                f"{p.peak_memory_mb:.2f}",
                f"{p.mean_power_w:.3f}",
                f"{p.accuracy:.4f}",
                "FAILED: " + p.error if p.error else ("ok" if p.stabilized else "ok (unstabilized)"),
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"hardware {self.hardware_id}: {len(self.records)} records, {len(self.failed)} failed pair(s)")
        return "\n".join(lines)


class Harness:
    """Runs the benchmark procedure on one device.

    Not thread-safe: one harness drives one sequential run.
    """

    def __init__(
        self,
        sensors: SensorProvider,
        policy: StabilizePolicy | None = None,
        composite: CompositeSpec = DEFAULT_COMPOSITE,
        repeats: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.sensors = sensors
        self.policy = policy or StabilizePolicy()
        self.composite = composite
        self.repeats = repeats
        self.clock = clock
        self.sleep = sleep
        self.last_outcome: StabilizeOutcome | None = None
        self.stabilize_calls = 0

    def stabilize(self) -> StabilizeOutcome:
        self.stabilize_calls += 1
        self.last_outcome = stabilize(self.sensors, self.policy, self.clock, self.sleep)
        return self.last_outcome

    def _measure(self, workload: Workload, ids: RunIds, phase: Phase, index: int, batch_size: int) -> BenchmarkRecord:
        t0 = time.perf_counter()
        try:
            result, memory = self.sensors.peak_memory_mb(lambda: workload.forward(batch_size))
        except SensorError:
            raise
        except Exception as exc:
            raise WorkloadFailure(phase, index, batch_size, exc) from exc
        wall_ms = (time.perf_counter() - t0) * 1000.0
        latency = wall_ms if result.latency_ms is None else float(result.latency_ms)

        metrics: dict[MetricKind, float] = {
            MetricKind.EXECUTION_TIME_MS: latency,
            MetricKind.MEMORY_MB: max(0.0, float(memory)),
            MetricKind.POWER_W: _read(self.sensors, "power_w"),
            MetricKind.CPU_TEMP_C: _read(self.sensors, "cpu_temp_c"),
        }
        metrics[MetricKind.CARBON_FOOTPRINT] = carbon_footprint(metrics, self.composite)
        if result.confusion is not None:
            metrics.update(classification_metrics(result.confusion).as_metrics())
        elif result.total > 0:
            metrics[MetricKind.ACCURACY] = result.correct / result.total

        assert self.last_outcome is not None
        return BenchmarkRecord(
            model_id=ids.model_id,
            task_id=ids.task_id,
            hardware_id=ids.hardware_id,
            batch_size=batch_size,
            batch_index=index,
            phase=phase,
            metrics=metrics,
            timestamp=utc_now(),
            stabilized=self.last_outcome.stabilized,
        )

    def _run(self, workload: Workload, ids: RunIds, phase: Phase, sizes: Iterable[int]) -> list[BenchmarkRecord]:
        if self.last_outcome is None:
            self.stabilize()
        records: list[BenchmarkRecord] = []
        for index, size in enumerate(sizes):
            try:
                records.append(self._measure(workload, ids, phase, index, size))
            except WorkloadFailure as exc:
                exc.partial = records
                raise
        return records

    def batch_sweep(self, workload: Workload, ids: RunIds) -> list[BenchmarkRecord]:
        """One forward pass (``repeats`` with the knob) per batch size 1..100."""
        sizes = [b for b in SWEEP_SIZES for _ in range(self.repeats)]
        return self._run(workload, ids, Phase.BATCH_SWEEP, sizes)

    def fixed_batch_run(
        self, workload: Workload, ids: RunIds, dataset_size: int, trailing_stabilize: bool = True
    ) -> list[BenchmarkRecord]:
        """Forward every batch of the dataset at batch size 32, then stabilize."""
        sizes = batch_schedule(dataset_size)
        try:
            return self._run(workload, ids, Phase.FIXED_BATCH, sizes)
        finally:
            if trailing_stabilize:
                self.stabilize()

    def benchmark_pairs(
        self,
        pairs: Sequence[tuple[Workload, TaskDescriptor]],
        hardware: HardwareProfile,
        store: Any = None,
    ) -> RunReport:
        """Benchmark every pair on ``hardware``; a failing pair does not stop the rest.

        Records are appended to ``store`` (anything with ``append_records``)
        pair by pair as they complete.
        """
        if not pairs:
            raise ValueError("no (workload, task) pairs to benchmark")
        report = RunReport(hardware.id)
        self.stabilize()
        for workload, task in pairs:
            ids = RunIds(workload.model_id, task.id, hardware.id)
            summary = PairSummary(ids.model_id, ids.task_id)
            records: list[BenchmarkRecord] = []
            try:
                records += self.batch_sweep(workload, ids)
                records += self.fixed_batch_run(workload, ids, task.num_samples, trailing_stabilize=False)
            except WorkloadFailure as exc:
                records += exc.partial
                summary.error = str(exc)
                logger.error("pair (%s, %s) failed: %s", ids.model_id, ids.task_id, exc)
            finally:
                self.stabilize()
            _summarize(summary, records)
            if store is not None and records:
                store.append_records(records)
            report.records += records
            report.pairs.append(summary)
        report.stabilize_calls = self.stabilize_calls
        return report


def _summarize(summary: PairSummary, records: list[BenchmarkRecord]) -> None:
    summary.records = len(records)
    if not records:
        return
    summary.stabilized = all(r.stabilized for r in records)
    summary.peak_memory_mb = max(r.metrics[MetricKind.MEMORY_MB] for r in records)
    summary.mean_power_w = float(np.mean([r.metrics[MetricKind.POWER_W] for r in records]))
    fixed = [r for r in records if r.phase is Phase.FIXED_BATCH]
    at32 = [r.metrics[MetricKind.EXECUTION_TIME_MS] for r in fixed if r.batch_size == FIXED_BATCH_SIZE]
    if at32:
        summary.mean_latency_ms_b32 = float(np.mean(at32))
    acc = [(r.metrics[MetricKind.ACCURACY], r.batch_size) for r in fixed if MetricKind.ACCURACY in r.metrics]
    if acc:
        # sample-weighted, i.e. the tally over the whole dataset
        summary.accuracy = sum(a * n for a, n in acc) / sum(n for _, n in acc)


def batch_sweep(workload: Workload, sensors: SensorProvider, policy: StabilizePolicy, ids: RunIds, **kwargs):
    return Harness(sensors, policy, **kwargs).batch_sweep(workload, RunIds(*ids))


def fixed_batch_run(
    workload: Workload, sensors: SensorProvider, policy: StabilizePolicy, ids: RunIds, dataset_size: int, **kwargs
):
    return Harness(sensors, policy, **kwargs).fixed_batch_run(workload, RunIds(*ids), dataset_size)


def benchmark_pairs(
    pairs: Sequence[tuple[Workload, TaskDescriptor]],
    hardware: HardwareProfile,
    sensors: SensorProvider,
    policy: StabilizePolicy | None = None,
    store: Any = None,
    **kwargs,
) -> RunReport:
    return Harness(sensors, policy, **kwargs).benchmark_pairs(pairs, hardware, store)


# ---------------------------------------------------------------------------
# Sensor providers
# ---------------------------------------------------------------------------


class HostSensors:
    """Reads the build machine's own counters via psutil.

    Power and temperature are read where the OS exposes them (RAPL energy
    counters, hwmon sensors).  When unavailable they read as 0 W and the
    midpoint of ``fallback_temp_c`` respectively, with a one-time warning.
    Peak memory is the Python-heap high-water mark tracked by tracemalloc.
    """

    RAPL = "/sys/class/powercap/intel-rapl:0/energy_uj"

    def __init__(self, fallback_temp_c: float = 40.0):
        import psutil

        self._psutil = psutil
        self.fallback_temp_c = fallback_temp_c
        self._warned: set[str] = set()
        self._energy: tuple[float, float] | None = None
        psutil.cpu_percent(interval=None)

    def _warn_once(self, what: str) -> None:
        if what not in self._warned:
            self._warned.add(what)
            warnings.warn(f"host sensor {what} unavailable; using a placeholder reading", RuntimeWarning)

    def cpu_util(self) -> float:
        return self._psutil.cpu_percent(interval=None) / 100.0

    def ram_util(self) -> float:
        return self._psutil.virtual_memory().percent / 100.0

    def cpu_temp_c(self) -> float:
        read = getattr(self._psutil, "sensors_temperatures", None)
        temps = read() if read else {}
        for entries in temps.values():
            for entry in entries:
                if entry.current is not None and math.isfinite(entry.current):
                    return float(entry.current)
        self._warn_once("cpu_temp_c")
        return self.fallback_temp_c

    def power_w(self) -> float:
        try:
            with open(self.RAPL) as fh:
                energy_uj = float(fh.read())
        except OSError:
            self._warn_once("power_w")
            return 0.0
        now = time.monotonic()
        previous, self._energy = self._energy, (now, energy_uj)
        if previous is None or now <= previous[0] or energy_uj < previous[1]:
            return 0.0
        return (energy_uj - previous[1]) / 1e6 / (now - previous[0])

    def peak_memory_mb(self, during: Callable[[], T]) -> tuple[T, float]:
        started = not tracemalloc.is_tracing()
        if started:
            tracemalloc.start()
        try:
            tracemalloc.reset_peak()
            baseline, _ = tracemalloc.get_traced_memory()
            result = during()
            _, peak = tracemalloc.get_traced_memory()
        finally:
            if started:
                tracemalloc.stop()
        return result, max(0, peak - baseline) / 2**20


class ScriptedSensors:
    """Deterministic sensor fixture.

    Each reading is either a constant or a sequence consumed one value per
    read (the last value repeats once exhausted).  Every read is appended to
    ``events`` (shared with scripted workloads when passed the same list),
    which lets tests assert call order.
    """

    def __init__(
        self,
        cpu: float | Sequence[float] = 0.05,
        ram: float | Sequence[float] = 0.10,
        temp: float | Sequence[float] = 40.0,
        power: float | Sequence[float] = 5.0,
        memory_mb: float | Sequence[float] = 64.0,
        events: list[str] | None = None,
    ):
        self._script = {"cpu_util": cpu, "ram_util": ram, "cpu_temp_c": temp, "power_w": power, "memory": memory_mb}
        self._pos = {k: 0 for k in self._script}
        self.events = events if events is not None else []

    def _next(self, name: str) -> float:
        self.events.append(name)
        value = self._script[name]
        if isinstance(value, (int, float)):
            return float(value)
        i = min(self._pos[name], len(value) - 1)
        self._pos[name] += 1
        item = value[i]
        if isinstance(item, BaseException):
            raise item
        return float(item)

    def cpu_util(self) -> float:
        return self._next("cpu_util")

    def ram_util(self) -> float:
        return self._next("ram_util")

    def cpu_temp_c(self) -> float:
        return self._next("cpu_temp_c")

    def power_w(self) -> float:
        return self._next("power_w")

    def peak_memory_mb(self, during: Callable[[], T]) -> tuple[T, float]:
        result = during()
        return result, self._next("memory")


class ScriptedWorkload:
    """Workload with a planted latency law ``intercept + slope * batch``.

    ``fail_at`` makes the n-th forward call (0-based) raise; ``fail_at=0``
    with ``always_fail=True`` fails every call.
    """

    def __init__(
        self,
        model_id: str,
        intercept_ms: float = 10.0,
        slope_ms: float = 1.0,
        accuracy: float = 0.9,
        jitter_ms: float = 0.0,
        seed: int = 0,
        fail_at: int | None = None,
        always_fail: bool = False,
        events: list[str] | None = None,
    ):
        self.model_id = model_id
        self.description = f"scripted {model_id}: {intercept_ms} + {slope_ms}*batch ms"
        self.intercept_ms = intercept_ms
        self.slope_ms = slope_ms
        self.accuracy = accuracy
        self.jitter_ms = jitter_ms
        self.fail_at = fail_at
        self.always_fail = always_fail
        self.events = events if events is not None else []
        self.calls = 0
        self._rng = np.random.default_rng(seed)
        self._owed = 0.0

    def forward(self, batch_size: int) -> WorkResult:
        index = self.calls
        self.calls += 1
        self.events.append(f"forward:{batch_size}")
        if self.always_fail or (self.fail_at is not None and index == self.fail_at):
            raise RuntimeError(f"scripted failure at call {index}")
        latency = self.intercept_ms + self.slope_ms * batch_size
        if self.jitter_ms:
            latency += float(self._rng.normal(0.0, self.jitter_ms))
        # carry the rounding remainder so the running tally tracks accuracy exactly
        self._owed += self.accuracy * batch_size
        correct = int(math.floor(self._owed + 0.5))
        self._owed -= correct
        return WorkResult(latency, max(0, min(batch_size, correct)), batch_size)


def default_sensor_kind(flag: str | None = None) -> str:
    kind = flag or os.environ.get(SENSOR_ENV, "synthetic")
    if kind not in ("host", "scripted", "synthetic"):
        raise ValueError(f"unknown sensor provider {kind!r} (expected host, scripted or synthetic)")
    return kind
