"""File formats: .ten tensor dumps, checkpoints, expression and trajectory files.

A .ten file is: 8-byte magic ``TQFTEN01``, a little-endian uint32 header
length, the UTF-8 JSON header ``{"dtype": "f32"|"f64", "shape": [...]}`` and
the raw little-endian values in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TQFTEN01"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


def write_ten(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    name = _NAMES[np.dtype(arr.dtype)]
    header = json.dumps({"dtype": name, "shape": list(arr.shape)}).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.astype(_DTYPES[name]).tobytes(order="C"))


def read_ten(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        dtype = _DTYPES.get(header.get("dtype"))
        if dtype is None:
            raise ValueError(f"{path}: unknown dtype {header.get('dtype')!r}")
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise ValueError(f"{path}: truncated payload")
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(out_dir, params, manifest: dict) -> None:
    """One .ten per parameter plus a JSON manifest (config, seed, step)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for p in params:
        write_ten(out / f"{p.name}.ten", p.data)
        names.append(p.name)
    doc = dict(manifest)
    doc["params"] = sorted(names)
    with open(out / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Returns (manifest dict, {param name: array})."""
    ckpt = Path(ckpt_dir)
    with open(ckpt / "manifest.json") as fh:
        manifest = json.load(fh)
    state = {}
    for name in manifest["params"]:
        state[name] = read_ten(ckpt / f"{name}.ten")
    return manifest, state


# -- expressions ---------------------------------------------------------------


def write_expressions(path, records) -> None:
    """JSON-lines, one {"tokens": [...], "tags": [...], "target_id": int} per row."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_expressions(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# -- recorded trajectories -------------------------------------------------------


def save_trajectories(traj_dir, coords: np.ndarray, embed: np.ndarray | None, valid: np.ndarray) -> None:
    d = Path(traj_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_ten(d / "coords.ten", coords)
    if embed is not None:
        write_ten(d / "embed.ten", embed)
    with open(d / "valid.json", "w") as fh:
        json.dump({"valid": np.asarray(valid, bool).astype(int).tolist()}, fh)
        fh.write("\n")


def load_trajectories(traj_dir):
    d = Path(traj_dir)
    coords = read_ten(d / "coords.ten")
    embed_path = d / "embed.ten"
    embed = read_ten(embed_path) if embed_path.exists() else None
    with open(d / "valid.json") as fh:
        valid = np.asarray(json.load(fh)["valid"], bool)
    return coords, embed, valid
