"""On-disk caches: a content-addressed JSON-lines key/value file and a blob store."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Optional

from rareger.errors import CacheCorruptionError


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def content_key(*parts: Any) -> str:
    return sha256_hex(canonical_json(list(parts)))


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class JsonlCache:
    """Key/value cache persisted as JSON lines with a per-record value hash.

    ``path=None`` keeps everything in memory.  Every ``put`` rewrites the file
    atomically; readers never observe a half-written cache.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, Any] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key, value, digest = rec["key"], rec["value"], rec["sha256"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CacheCorruptionError(f"{self.path}:{lineno}: unreadable cache record") from exc
                if sha256_hex(canonical_json(value)) != digest:
                    raise CacheCorruptionError(f"{self.path}:{lineno}: hash mismatch for key {key}")
                self._data[key] = value

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            if key in self._data:
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return None

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def put(self, key: str, value: Any) -> None:
        with self._lock:
            self._data[key] = value
            if self.path is not None:
                lines = [
                    canonical_json({"key": k, "value": v, "sha256": sha256_hex(canonical_json(v))})
                    for k, v in sorted(self._data.items())
                ]
                atomic_write(self.path, "".join(line + "\n" for line in lines))


class BlobStore:
    """Immutable blobs under ``root/<2-char prefix>/<sha256>``."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def put(self, data: bytes) -> str:
        digest = sha256_hex(data)
        path = self.path_for(digest)
        if not path.exists():
            atomic_write(path, data)
        return digest

    def exists(self, digest: str) -> bool:
        return self.path_for(digest).exists()

    def get(self, digest: str) -> bytes:
        data = self.path_for(digest).read_bytes()
        if sha256_hex(data) != digest:
            raise CacheCorruptionError(f"blob {digest} does not match its content hash")
        return data
