"""Append-only record log with per-record checksums and snapshot support.

The service reconstructs its full state by replaying this log; the database
engine behind it is deliberately just a JSONL file behind a small contract.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Iterator, Optional


class StorageError(Exception):
    pass


class CorruptRecord(StorageError):
    def __init__(self, line_no: int, reason: str, records: list):
        self.line_no = line_no
        self.reason = reason
        self.records = records  # valid records before the corruption
        super().__init__(f"corrupt record at line {line_no}: {reason}")


class MissingRevision(StorageError):
    pass


def _checksum(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class StorageRecord:
    kind: str
    id: str
    revision: int
    payload: dict
    written_at: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "id": self.id,
            "revision": self.revision,
            "payload": self.payload,
            "written_at": self.written_at,
        }


class Storage:
    """Append-only log at ``<root>/records.jsonl``; (kind, id, revision) unique."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.path = os.path.join(root, "records.jsonl")
        self._revisions: dict[tuple, int] = {}
        for rec in self.read_all(strict=False):
            key = (rec.kind, rec.id)
            self._revisions[key] = max(self._revisions.get(key, -1), rec.revision)

    def append(self, kind: str, entity_id: str, payload: dict, written_at: float = 0.0) -> StorageRecord:
        key = (kind, entity_id)
        revision = self._revisions.get(key, -1) + 1
        rec = StorageRecord(kind, entity_id, revision, payload, written_at)
        doc = rec.to_dict()
        doc["checksum"] = _checksum(rec.to_dict())
        line = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._revisions[key] = revision
        return rec

    def _iter_lines(self) -> Iterator[tuple[int, str]]:
        if not os.path.exists(self.path):
            return
        with open(self.path, encoding="utf-8") as fh:
            for i, line in enumerate(fh, 1):
                yield i, line

    def read_all(self, strict: bool = True) -> list:
        """All records in write order; a bad trailing record raises CorruptRecord
        (strict) carrying the intact prefix, or is dropped (non-strict)."""
        records: list[StorageRecord] = []
        for i, line in self._iter_lines():
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                claimed = doc.pop("checksum")
                if claimed != _checksum(doc):
                    raise ValueError("checksum mismatch")
                records.append(
                    StorageRecord(
                        kind=doc["kind"],
                        id=doc["id"],
                        revision=doc["revision"],
                        payload=doc["payload"],
                        written_at=doc.get("written_at", 0.0),
                    )
                )
            except (ValueError, KeyError) as exc:
                if strict:
                    raise CorruptRecord(i, str(exc), records) from exc
                break
        return records

    def latest(self, kind: str, entity_id: str) -> Optional[StorageRecord]:
        best = None
        for rec in self.read_all(strict=False):
            if rec.kind == kind and rec.id == entity_id:
                if best is None or rec.revision > best.revision:
                    best = rec
        return best

    def load_revision(self, kind: str, entity_id: str, revision: int) -> StorageRecord:
        for rec in self.read_all(strict=False):
            if rec.kind == kind and rec.id == entity_id and rec.revision == revision:
                return rec
        raise MissingRevision(f"{kind}/{entity_id}@{revision}")
