"""Atomic file writes and canonical JSON serialization.

Artifacts are written via a temp file + rename in the target directory, so
a crash never leaves a partial manifest/checkpoint behind. JSON is emitted
with sorted keys, making re-runs byte-comparable.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_json(path, payload) -> None:
    atomic_write_text(path, dump_json(payload))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
