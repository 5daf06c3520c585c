"""Content-addressed array cache for expensive spectral computations.

Keys are SHA-256 hashes of a canonical JSON rendering of the physics-relevant
parameters plus a schema version, so any parameter change or algorithm bump
invalidates old entries.  Payloads are npz files written atomically.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

CACHE_SCHEMA = "billiardtherm-cache-1"


def cache_key(params: dict) -> str:
    blob = json.dumps({"schema": CACHE_SCHEMA, **params}, sort_keys=True,
                      separators=(",", ":"), default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()


class ArtifactCache:
    """Directory-backed npz cache; a None root disables caching."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.npz"

    def load(self, params: dict) -> dict | None:
        if self.root is None:
            return None
        path = self._path(cache_key(params))
        if not path.exists():
            return None
        with np.load(path, allow_pickle=False) as payload:
            return {name: payload[name] for name in payload.files}

    def store(self, params: dict, **arrays) -> None:
        if self.root is None:
            return
        path = self._path(cache_key(params))
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp.npz")
        os.close(fd)
        try:
            with open(tmp, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
