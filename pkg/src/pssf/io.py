"""Persistence formats: 16-bit PNG, JSON-lines, checksums, provenance sidecars."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from . import __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return sha256_bytes(canonical_json(cfg).encode())[:16]


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_png16(path, pixels: np.ndarray, text: dict | None = None) -> None:
    """Lossless 16-bit grayscale PNG; ``text`` goes into tEXt chunks."""
    if pixels.dtype != np.uint16 or pixels.ndim != 2:
        raise ValueError("expected a 2D uint16 array")
    img = Image.fromarray(pixels)
    info = PngImagePlugin.PngInfo()
    for k, v in sorted((text or {}).items()):
        info.add_text(k, str(v))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG", pnginfo=info)
    os.replace(tmp, path)


def read_png16(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.array(img)
    if arr.dtype != np.uint16:
        arr = arr.astype(np.uint16)
    return arr


def write_u16_raw(path, pixels: np.ndarray) -> None:
    atomic_write_bytes(path, pixels.astype("<u2").tobytes())


def write_jsonl(path, rows) -> None:
    atomic_write_text(path, "".join(canonical_json(r) + "\n" for r in rows))


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_provenance(path, stage: str, cfg_hash: str, **extra) -> None:
    """Sidecar ``<file>.meta.json`` naming the stage, config hash and tool version."""
    meta = {"file": Path(path).name, "stage": stage, "config_hash": cfg_hash, "tool_version": __version__}
    meta.update(extra)
    write_json(Path(str(path) + ".meta.json"), meta)
