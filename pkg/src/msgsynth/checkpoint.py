"""On-disk checkpoint format.

A checkpoint is a directory holding ``manifest.txt`` (``key = value`` lines,
one per line, in write order) and ``arrays/<layer.path>.f32`` files of raw
little-endian float32 values. Each array's shape is recorded in the manifest as
``array.<layer.path> = AxBxC``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

MANIFEST = "manifest.txt"
ARRAY_DIR = "arrays"
FORMAT_TAG = "msgsynth-checkpoint-1"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _shape_text(shape) -> str:
    return "x".join(str(int(v)) for v in shape) if len(shape) else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "scalar" else tuple(int(v) for v in text.split("x"))


def save_checkpoint(directory, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    directory = Path(directory)
    (directory / ARRAY_DIR).mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT_TAG}"]
    for key, value in meta.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise CheckpointError(f"manifest entry {key!r} is not a single-line key")
        lines.append(f"{key} = {text}")
    stale = {p.name for p in (directory / ARRAY_DIR).glob("*.f32")}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        lines.append(f"array.{name} = {_shape_text(arr.shape)}")
        fname = f"{name}.f32"
        stale.discard(fname)
        np.ascontiguousarray(arr, dtype=_LE_F32).tofile(directory / ARRAY_DIR / fname)
    for fname in stale:
        os.remove(directory / ARRAY_DIR / fname)
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def read_manifest(directory) -> dict[str, str]:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no manifest at {path}")
    meta: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise CheckpointError(f"{path}:{lineno}: malformed line {line!r}")
        meta[key.strip()] = value.strip()
    if meta.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    return meta


def load_checkpoint(directory) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Return (meta, arrays). Every array file is validated against its
    recorded shape before anything is returned."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    meta, arrays = {}, {}
    for key, value in manifest.items():
        if key.startswith("array."):
            name = key[len("array."):]
            shape = _parse_shape(value)
            path = directory / ARRAY_DIR / f"{name}.f32"
            if not path.is_file():
                raise CheckpointError(f"missing array file {path}")
            expected = int(np.prod(shape, dtype=np.int64)) * 4
            if path.stat().st_size != expected:
                raise CheckpointError(
                    f"corrupted array {name}: {path.stat().st_size} bytes, expected {expected}")
            arrays[name] = np.fromfile(path, dtype=_LE_F32).reshape(shape).astype(np.float32)
        elif key != "format":
            meta[key] = value
    return meta, arrays
