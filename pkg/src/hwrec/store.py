"""On-disk store: registries, the benchmark record log, scorer artifacts.

Layout under the store root::

    registry/models.json  registry/hardware.json  registry/tasks.json
    records/bench.jsonl   (append-only, one BenchmarkRecord per line)
    artifacts/scorer-<name>.json
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from filelock import FileLock

from hwrec.domain import (
    BenchmarkRecord,
    HardwareProfile,
    ModelCard,
    Phase,
    TaskDescriptor,
    Violation,
    validate_registry,
)
from hwrec.fusion import ScorerParams

HOME_ENV = "HWREC_HOME"


class RegistryKind(str, Enum):
    MODELS = "models"
    HARDWARE = "hardware"
    TASKS = "tasks"


_ENTITY = {
    RegistryKind.MODELS: ModelCard,
    RegistryKind.HARDWARE: HardwareProfile,
    RegistryKind.TASKS: TaskDescriptor,
}


class StoreError(Exception):
    pass


class RegistryParseError(StoreError):
    def __init__(self, path: Path, message: str, line: int | None = None, column: int | None = None):
        where = f":{line}:{column}" if line is not None else ""
        super().__init__(f"{path}{where}: {message}")
        self.path = path
        self.line = line
        self.column = column


class RegistryValidationError(StoreError):
    def __init__(self, path: Path, report: list[Violation]):
        lines = "\n".join(f"  {v}" for v in report)
        super().__init__(f"{path}: rejected, {len(report)} violation(s)\n{lines}")
        self.path = path
        self.report = report


@dataclass
class IngestResult:
    kind: RegistryKind
    count: int
    report: list[Violation] = field(default_factory=list)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def parse_registry(path: str | Path, kind: RegistryKind | str) -> list:
    """Parse a registry file: a JSON list of entities or ``{"<kind>": [...]}``."""
    path = Path(path)
    kind = RegistryKind(kind)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not text.strip():
        return []
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryParseError(path, exc.msg, exc.lineno, exc.colno) from exc
    if isinstance(data, dict):
        if kind.value not in data:
            raise RegistryParseError(path, f"expected a list or an object with key {kind.value!r}")
        data = data[kind.value]
    if not isinstance(data, list):
        raise RegistryParseError(path, "registry must be a JSON list")
    cls = _ENTITY[kind]
    items = []
    for i, entry in enumerate(data):
        try:
            items.append(cls.from_dict(entry))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise RegistryParseError(path, f"entry {i}: {detail}") from exc
    return items


def _validate(kind: RegistryKind, items: Sequence) -> list[Violation]:
    return validate_registry(**{kind.value: items})


class Store:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    @classmethod
    def from_env(cls, default: str | Path = ".hwrec") -> Store:
        return cls(os.environ.get(HOME_ENV, default))

    @property
    def records_path(self) -> Path:
        return self.root / "records" / "bench.jsonl"

    @property
    def lock_path(self) -> Path:
        return self.root / "records" / "bench.jsonl.lock"

    def registry_path(self, kind: RegistryKind | str) -> Path:
        return self.root / "registry" / f"{RegistryKind(kind).value}.json"

    # -- registries ----------------------------------------------------------

    def ingest_registry(self, path: str | Path, kind: RegistryKind | str) -> IngestResult:
        """Validate a registry file and merge it into the store, all or nothing.

        Entries replace stored entries with the same id.  Any violation in the
        file, or in the merged registry, rejects the whole file.
        """
        kind = RegistryKind(kind)
        incoming = parse_registry(path, kind)
        report = _validate(kind, incoming)
        if report:
            raise RegistryValidationError(Path(path), report)
        if not incoming:
            return IngestResult(kind, 0)
        new_ids = {item.id for item in incoming}
        merged = [item for item in self.load_registry(kind) if item.id not in new_ids] + incoming
        report = _validate(kind, merged)
        if report:
            raise RegistryValidationError(Path(path), report)
        payload = json.dumps([item.to_dict() for item in merged], indent=2)
        _atomic_write(self.registry_path(kind), payload + "\n")
        return IngestResult(kind, len(incoming))

    def load_registry(self, kind: RegistryKind | str) -> list:
        path = self.registry_path(kind)
        if not path.exists():
            return []
        return parse_registry(path, kind)

    def models(self) -> list[ModelCard]:
        return self.load_registry(RegistryKind.MODELS)

    def hardware(self) -> list[HardwareProfile]:
        return self.load_registry(RegistryKind.HARDWARE)

    def tasks(self) -> list[TaskDescriptor]:
        return self.load_registry(RegistryKind.TASKS)

    def lookup(self, kind: RegistryKind | str, entity_id: str):
        for item in self.load_registry(kind):
            if item.id == entity_id:
                return item
        noun = {"models": "model", "hardware": "hardware", "tasks": "task"}[RegistryKind(kind).value]
        raise KeyError(f"unknown {noun} id {entity_id!r}")

    # -- benchmark records ---------------------------------------------------

    def append_records(self, records: Iterable[BenchmarkRecord]) -> list[int]:
        """Append records durably; returns the byte offset of each new line.

        The batch is written with a single write under the writer lock and
        fsynced before returning.  On failure the file is truncated back so
        no partial line survives.
        """
        records = list(records)
        for rec in records:
            problems = rec.problems()
            if problems:
                raise ValueError(f"invalid record for {rec.model_id}: {'; '.join(problems)}")
        if not records:
            return []
        lines = [json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records]
        blob = "".join(lines).encode("utf-8")
        self.records_path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(self.lock_path)):
            fd = os.open(self.records_path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                start = os.lseek(fd, 0, os.SEEK_END)
                try:
                    written = 0
                    while written < len(blob):
                        written += os.write(fd, blob[written:])
                    os.fsync(fd)
                except OSError as exc:
                    os.ftruncate(fd, start)
                    raise StoreError(f"append to {self.records_path} failed: {exc}") from exc
            finally:
                os.close(fd)
        offsets = []
        pos = start
        for line in lines:
            offsets.append(pos)
            pos += len(line.encode("utf-8"))
        return offsets

    def scan_records(self) -> Iterator[tuple[int, BenchmarkRecord]]:
        """Yield ``(offset, record)`` for every complete line, in append order."""
        if not self.records_path.exists():
            return
        with open(self.records_path, "rb") as fh:
            offset = 0
            for raw in fh:
                start, offset = offset, offset + len(raw)
                if not raw.endswith(b"\n"):
                    break  # a writer is mid-append
                yield start, BenchmarkRecord.from_dict(json.loads(raw))

    def query_records(
        self,
        model_id: str | None = None,
        task_id: str | None = None,
        hardware_id: str | None = None,
        phase: Phase | str | None = None,
    ) -> list[BenchmarkRecord]:
        phase = Phase(phase) if phase is not None else None
        out = []
        for _, rec in self.scan_records():
            if model_id is not None and rec.model_id != model_id:
                continue
            if task_id is not None and rec.task_id != task_id:
                continue
            if hardware_id is not None and rec.hardware_id != hardware_id:
                continue
            if phase is not None and rec.phase is not phase:
                continue
            out.append(rec)
        return out

    # -- artifacts -----------------------------------------------------------

    def artifact_path(self, name: str) -> Path:
        return self.root / "artifacts" / f"scorer-{name}.json"

    def save_scorer(self, params: ScorerParams, name: str) -> Path:
        path = self.artifact_path(name)
        _atomic_write(path, json.dumps(params.to_dict()))
        return path

    def load_scorer(self, name_or_path: str | Path) -> ScorerParams:
        path = Path(name_or_path)
        if not path.exists():
            path = self.artifact_path(str(name_or_path))
        if not path.exists():
            raise StoreError(f"no scorer artifact {name_or_path}")
        return ScorerParams.load(path)


def write_json(path: str | Path, payload: Any) -> None:
    _atomic_write(Path(path), json.dumps(payload, indent=2) + "\n")
