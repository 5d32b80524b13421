"""Platform-managed state: named databases with namespaced key-value access.

One embedded store backs every database; each database owns a disjoint
namespace (a subdirectory holding an append-only JSON-lines log replayed on
open).  Databases are created attached to an owner (entity or stream) and are
cascade-deleted with it.  Writes are fsynced before being acknowledged, so
acknowledged puts survive restart.
"""

from __future__ import annotations

import json
import os
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Union

from datax.errors import DuplicateName, NoSuchDatabase, NotFound, UnknownOwner


@dataclass(frozen=True)
class DatabaseRecord:
    name: str
    owner: str
    namespace: str

    def to_doc(self) -> dict[str, str]:
        return {"name": self.name, "owner": self.owner, "namespace": self.namespace}


class _Database:
    """One namespace: in-memory ordered map + append-only log."""

    def __init__(self, record: DatabaseRecord, directory: Path):
        self.record = record
        self.directory = directory
        self.log_path = directory / "data.jsonl"
        self.data: dict[str, Any] = {}
        directory.mkdir(parents=True, exist_ok=True)
        meta = directory / "meta.json"
        if not meta.exists():
            meta.write_text(json.dumps(record.to_doc(), sort_keys=True))
        if self.log_path.exists():
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    if entry.get("tombstone"):
                        self.data.pop(entry["k"], None)
                    else:
                        self.data[entry["k"]] = entry["v"]
        self._fh = open(self.log_path, "a", encoding="utf-8")

    def append(self, entry: dict[str, Any]) -> None:
        self._fh.write(json.dumps(entry, sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


class StateStore:
    """All databases under one storage root, one subdirectory per namespace.

    ``owner_check`` (name -> bool), when given, gates creation on the owner
    being a registered entity or stream.
    """

    def __init__(
        self,
        root: Union[str, Path],
        owner_check: Optional[Callable[[str], bool]] = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.owner_check = owner_check
        self._lock = threading.RLock()
        self._dbs: dict[str, _Database] = {}
        # Recover existing namespaces.
        for meta in sorted(self.root.glob("*/meta.json")):
            record = DatabaseRecord(**json.loads(meta.read_text()))
            self._dbs[record.name] = _Database(record, meta.parent)

    # -- database lifecycle --------------------------------------------------

    def create_database(self, name: str, owner: str) -> DatabaseRecord:
        with self._lock:
            if name in self._dbs:
                raise DuplicateName("database", name)
            if self.owner_check is not None and not self.owner_check(owner):
                raise UnknownOwner(owner)
            record = DatabaseRecord(name=name, owner=owner, namespace=name)
            self._dbs[name] = _Database(record, self.root / record.namespace)
            return record

    def delete_database(self, name: str) -> None:
        with self._lock:
            db = self._dbs.pop(name, None)
            if db is None:
                raise NotFound("database", name)
            db.close()
            shutil.rmtree(db.directory, ignore_errors=True)

    def delete_owned(self, owner: str) -> list[str]:
        """Cascade: drop every database attached to ``owner``."""
        with self._lock:
            doomed = [n for n, db in self._dbs.items() if db.record.owner == owner]
            for name in doomed:
                self.delete_database(name)
            return sorted(doomed)

    def get_database(self, name: str) -> DatabaseRecord:
        with self._lock:
            db = self._dbs.get(name)
            if db is None:
                raise NotFound("database", name)
            return db.record

    def list_databases(self) -> list[DatabaseRecord]:
        with self._lock:
            return [self._dbs[n].record for n in sorted(self._dbs)]

    def close(self) -> None:
        with self._lock:
            for db in self._dbs.values():
                db.close()
            self._dbs.clear()

    # -- key-value access ----------------------------------------------------

    def _db(self, name: str) -> _Database:
        db = self._dbs.get(name)
        if db is None:
            raise NoSuchDatabase(name)
        return db

    def kv_put(self, db: str, key: str, value: Any) -> None:
        if not isinstance(key, str):
            raise ValueError("key must be a string")
        with self._lock:
            rec = self._db(db)
            rec.append({"k": key, "v": value})
            rec.data[key] = value

    def kv_get(self, db: str, key: str) -> Optional[Any]:
        with self._lock:
            return self._db(db).data.get(key)

    def kv_delete(self, db: str, key: str) -> None:
        with self._lock:
            rec = self._db(db)
            if key in rec.data:
                rec.append({"k": key, "tombstone": True})
                del rec.data[key]

    def kv_scan(self, db: str, prefix: str = "") -> list[tuple[str, Any]]:
        """(key, value) pairs with the prefix, in lexicographic key order."""
        with self._lock:
            rec = self._db(db)
            return [
                (k, rec.data[k]) for k in sorted(rec.data) if k.startswith(prefix)
            ]
