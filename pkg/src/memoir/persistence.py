"""Durable storage: append-only JSONL logs plus a small manifest.

Layout under a store root::

    <root>/manifest.json          format_version, embedding dimension, config hash
    <root>/<user_id>/episodes.jsonl
    <root>/<user_id>/facts.jsonl
    <root>/<user_id>/cycles.jsonl  (operational audit of learning cycles)

Every line is a self-contained JSON object with a "type" field, flushed and
fsynced before the append is acknowledged. A file truncated at any line
boundary stays loadable, and a trailing half-written line is ignored on
load, so a crash mid-write never poisons the store. Embeddings are encoded
as base64 little-endian float64 so reloads are bit-exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import FORMAT_VERSION, EngineConfig, Episode, SemanticFact

EPISODES_FILE = "episodes.jsonl"
FACTS_FILE = "facts.jsonl"
CYCLES_FILE = "cycles.jsonl"
MANIFEST_FILE = "manifest.json"

RECORD_TYPES = ("episode", "fact", "cycle_record")


class StoreLogError(Exception):
    pass


def encode_embedding(vector) -> str:
    return base64.b64encode(np.asarray(vector, dtype="<f8").tobytes()).decode("ascii")


def decode_embedding(encoded: str) -> tuple[float, ...]:
    raw = base64.b64decode(encoded.encode("ascii"))
    return tuple(float(x) for x in np.frombuffer(raw, dtype="<f8"))


def config_hash(cfg: EngineConfig) -> str:
    canonical = json.dumps(cfg.to_json(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


class StoreLog:
    """Single-writer append-only JSONL log with duplicate-id rejection."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seen_ids: set[str] = set()
        if self.path.exists():
            for record in read_records(self.path):
                record_id = record.get("id") or record.get("episode_id")
                if record_id:
                    self._seen_ids.add(record_id)
        self._file = None
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        record_type = record.get("type")
        if record_type not in RECORD_TYPES:
            raise StoreLogError(f"unknown record type: {record_type!r}")
        record_id = record.get("id") or record.get("episode_id")
        line = json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n"
        with self._lock:
            if record_id and record_id in self._seen_ids:
                raise StoreLogError(f"duplicate id append rejected: {record_id}")
            if self._file is None:
                self._file = open(self.path, "a", encoding="utf-8")
            self._file.write(line)
            self._file.flush()
            os.fsync(self._file.fileno())
            if record_id:
                self._seen_ids.add(record_id)

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None


def read_records(path: str | Path) -> list[dict]:
    """Replay a log file into record dicts.

    A final line without a newline terminator is treated as a crash remnant
    and skipped; any complete line that fails to parse is an error naming
    its line number.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text:
        return []
    complete, _, remainder = text.rpartition("\n")
    # `remainder` is a partial trailing line (no newline); ignore it.
    records = []
    for number, line in enumerate(complete.split("\n") if complete else [], start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StoreLogError(f"{path}: malformed line {number}: {exc}") from exc
        if not isinstance(record, dict) or record.get("type") not in RECORD_TYPES:
            raise StoreLogError(f"{path}: malformed line {number}: bad record type")
        records.append(record)
    return records


def episode_record(episode: Episode) -> dict:
    data = episode.to_json()
    data["embedding"] = encode_embedding(episode.embedding)
    data["type"] = "episode"
    return data


def fact_record(fact: SemanticFact) -> dict:
    data = fact.to_json()
    data["embedding"] = encode_embedding(fact.embedding)
    data["type"] = "fact"
    return data


def cycle_record(record_json: dict) -> dict:
    return {"type": "cycle_record", **record_json}


def episode_from_record(record: dict) -> Episode:
    data = dict(record)
    data.pop("type", None)
    data["embedding"] = decode_embedding(data["embedding"])
    return Episode.from_json(data)


def fact_from_record(record: dict) -> SemanticFact:
    data = dict(record)
    data.pop("type", None)
    data["embedding"] = decode_embedding(data["embedding"])
    return SemanticFact.from_json(data)


@dataclass
class Manifest:
    format_version: int = FORMAT_VERSION
    embedding_dimension: int | None = None
    engine_config_hash: str = ""

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "embedding_dimension": self.embedding_dimension,
            "engine_config_hash": self.engine_config_hash,
        }


class StoreRoot:
    """Filesystem layout around one store directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._logs: dict[tuple[str, str], StoreLog] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _check_user_id(user_id: str) -> str:
        if not user_id or user_id in (".", "..") or any(sep in user_id for sep in ("/", "\\")):
            raise StoreLogError(f"user id not usable as a directory name: {user_id!r}")
        return user_id

    def user_dir(self, user_id: str) -> Path:
        return self.root / self._check_user_id(user_id)

    def _log(self, user_id: str, filename: str) -> StoreLog:
        key = (user_id, filename)
        with self._lock:
            if key not in self._logs:
                self._logs[key] = StoreLog(self.user_dir(user_id) / filename)
            return self._logs[key]

    def episode_log(self, user_id: str) -> StoreLog:
        return self._log(user_id, EPISODES_FILE)

    def fact_log(self, user_id: str) -> StoreLog:
        return self._log(user_id, FACTS_FILE)

    def cycle_log(self, user_id: str) -> StoreLog:
        return self._log(user_id, CYCLES_FILE)

    def user_ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def load_user(self, user_id: str) -> tuple[list[Episode], list[SemanticFact]]:
        """Rebuild one user's stores by replaying their logs in file order."""
        directory = self.user_dir(user_id)
        episodes: list[Episode] = []
        facts: list[SemanticFact] = []
        episodes_path = directory / EPISODES_FILE
        if episodes_path.exists():
            episodes = [episode_from_record(r) for r in read_records(episodes_path)]
        facts_path = directory / FACTS_FILE
        if facts_path.exists():
            facts = [fact_from_record(r) for r in read_records(facts_path)]
        return episodes, facts

    def write_manifest(self, manifest: Manifest) -> None:
        path = self.root / MANIFEST_FILE
        path.write_text(json.dumps(manifest.to_json(), indent=2) + "\n", encoding="utf-8")

    def read_manifest(self) -> Manifest | None:
        path = self.root / MANIFEST_FILE
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise StoreLogError(f"unsupported store format version: {version!r}")
        return Manifest(
            format_version=version,
            embedding_dimension=data.get("embedding_dimension"),
            engine_config_hash=data.get("engine_config_hash", ""),
        )

    def close(self) -> None:
        with self._lock:
            for log in self._logs.values():
                log.close()
            self._logs.clear()
