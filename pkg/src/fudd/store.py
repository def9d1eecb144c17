"""Append-only JSON-lines log with a byte-offset index file.

``<name>.log.jsonl`` holds one JSON object per line, each with a ``key``; the
last record for a key wins. ``<name>.index.json`` maps keys to byte offsets and
remembers how much of the log it covers, so reopening only replays the tail.
A torn final line (interrupted write) is cut off on open.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator


class FrozenStoreError(RuntimeError):
    pass


class JsonlStore:
    def __init__(self, directory, name: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.dir / f"{name}.log.jsonl"
        self.index_path = self.dir / f"{name}.index.json"
        self._lock = threading.RLock()
        self._offsets: dict[str, int] = {}
        self.meta: dict[str, Any] = {}
        self._open()

    def _open(self) -> None:
        self.log_path.touch(exist_ok=True)
        start = 0
        if self.index_path.exists():
            idx = json.loads(self.index_path.read_text("utf-8"))
            size = self.log_path.stat().st_size
            if idx.get("log_bytes", 0) <= size:
                self._offsets = {k: int(v) for k, v in idx.get("offsets", {}).items()}
                self.meta = dict(idx.get("meta", {}))
                start = int(idx.get("log_bytes", 0))
        self._replay(start)

    def _replay(self, start: int) -> None:
        with open(self.log_path, "rb+") as f:
            f.seek(start)
            pos = start
            for raw in iter(f.readline, b""):
                if not raw.endswith(b"\n"):
                    f.truncate(pos)
                    break
                try:
                    key = json.loads(raw)["key"]
                except (ValueError, KeyError, TypeError):
                    pos += len(raw)
                    continue
                self._offsets[key] = pos
                pos += len(raw)

    def __contains__(self, key: str) -> bool:
        return key in self._offsets

    def __len__(self) -> int:
        return len(self._offsets)

    def keys(self) -> list[str]:
        return sorted(self._offsets)

    def get(self, key: str) -> dict | None:
        off = self._offsets.get(key)
        if off is None:
            return None
        with open(self.log_path, "rb") as f:
            f.seek(off)
            return json.loads(f.readline())

    def items(self) -> Iterator[tuple[str, dict]]:
        for k in self.keys():
            yield k, self.get(k)

    @property
    def frozen(self) -> bool:
        return bool(self.meta.get("frozen", False))

    def put(self, key: str, record: dict) -> None:
        line = json.dumps({"key": key, **record}, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            if self.frozen:
                raise FrozenStoreError(f"store {self.log_path.name} is frozen; cannot add {key!r}")
            with open(self.log_path, "ab") as f:
                pos = f.tell()
                f.write(line.encode("utf-8"))
                f.flush()
                os.fsync(f.fileno())
            self._offsets[key] = pos

    def write_index(self) -> None:
        with self._lock:
            body = {
                "log_bytes": self.log_path.stat().st_size,
                "meta": self.meta,
                "offsets": dict(sorted(self._offsets.items())),
            }
            tmp = self.index_path.with_name(self.index_path.name + ".tmp")
            tmp.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n", "utf-8")
            os.replace(tmp, self.index_path)

    def freeze(self) -> None:
        with self._lock:
            self.meta["frozen"] = True
            self.write_index()
