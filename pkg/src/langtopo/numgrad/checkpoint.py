"""Flat little-endian float64 parameter container with a text manifest.

``params.bin`` holds every array back to back; ``manifest.txt`` has one
``name<TAB>shape<TAB>byte_offset`` line per array (shape ``3x4``, ``-`` for
scalars) and ``@key<TAB>value`` lines for string metadata.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

BIN_NAME = "params.bin"
MANIFEST_NAME = "manifest.txt"
_DTYPE = np.dtype("<f8")


def save_checkpoint(directory, arrays: Mapping[str, np.ndarray],
                    meta: Mapping[str, str] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in (meta or {}).items():
        if "\t" in key or "\n" in str(value) or "\t" in str(value):
            raise ValueError(f"metadata {key!r} contains tabs or newlines")
        lines.append(f"@{key}\t{value}")
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        if "\t" in name or name.startswith("@"):
            raise ValueError(f"bad array name {name!r}")
        a = np.asarray(arr, dtype=_DTYPE)
        shape = "x".join(str(s) for s in a.shape) or "-"
        lines.append(f"{name}\t{shape}\t{offset}")
        chunks.append(a.tobytes(order="C"))
        offset += a.nbytes
    (directory / BIN_NAME).write_bytes(b"".join(chunks))
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    raw = (directory / BIN_NAME).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for lineno, line in enumerate((directory / MANIFEST_NAME).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if line.startswith("@"):
            if len(parts) != 2:
                raise ValueError(f"{MANIFEST_NAME}:{lineno}: malformed metadata line")
            meta[parts[0][1:]] = parts[1]
            continue
        if len(parts) != 3:
            raise ValueError(f"{MANIFEST_NAME}:{lineno}: expected name, shape, offset")
        name, shape_s, off_s = parts
        shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split("x"))
        offset = int(off_s)
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * _DTYPE.itemsize
        if end > len(raw):
            raise ValueError(f"{MANIFEST_NAME}:{lineno}: {name!r} runs past end of {BIN_NAME}")
        arrays[name] = np.frombuffer(raw[offset:end], dtype=_DTYPE).astype(np.float64).reshape(shape)
    return arrays, meta
