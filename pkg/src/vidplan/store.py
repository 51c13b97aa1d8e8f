"""Content-addressed plan persistence: immutable blobs under objects/ plus
an index file mapping plan ids to (hash, version). Hand-inspectable; no
database. Writers serialize through a lock and the index is replaced
atomically, so concurrent service requests stay isolated per plan id."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from threading import Lock

from .plan import PlanError


class VersionConflict(PlanError):
    code = "VERSION_CONFLICT"

    def __init__(self, plan_id: str, expected: int, current: int):
        super().__init__(
            f"plan {plan_id!r}: expected version {expected}, store has {current}"
        )
        self.current = current


class PlanStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "objects").mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.json"
        self._lock = Lock()
        if self._index_path.exists():
            self._index: dict[str, dict] = json.loads(self._index_path.read_text(encoding="utf-8"))
        else:
            self._index = {}

    def _object_path(self, digest: str) -> Path:
        return self.root / "objects" / f"{digest}.json"

    def _write_index(self) -> None:
        tmp = self._index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self._index, indent=2, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self._index_path)

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._index)

    def get(self, plan_id: str) -> tuple[bytes, int]:
        with self._lock:
            entry = self._index.get(plan_id)
            if entry is None:
                raise KeyError(plan_id)
            data = self._object_path(entry["hash"]).read_bytes()
            return data, entry["version"]

    def version(self, plan_id: str) -> int:
        with self._lock:
            entry = self._index.get(plan_id)
            if entry is None:
                raise KeyError(plan_id)
            return entry["version"]

    def put(self, plan_id: str, data: bytes, expected_version: int | None = None) -> int:
        """Store a new revision; ``expected_version`` enables optimistic
        concurrency (mismatch raises VersionConflict, nothing is written)."""
        digest = hashlib.sha256(data).hexdigest()
        with self._lock:
            entry = self._index.get(plan_id)
            current = entry["version"] if entry else 0
            if expected_version is not None and expected_version != current:
                raise VersionConflict(plan_id, expected_version, current)
            path = self._object_path(digest)
            if not path.exists():
                path.write_bytes(data)
            new_version = current + 1
            self._index[plan_id] = {"hash": digest, "version": new_version}
            self._write_index()
            return new_version
