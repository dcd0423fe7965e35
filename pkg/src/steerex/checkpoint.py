"""Deterministic checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a
compact sorted-key JSON header (format version, kind, config echo, step
counter, RNG state, parameter manifest), then the raw tensor bytes in
manifest order.  Tensor names are sorted, JSON keys are sorted, and
blobs are written verbatim, so save -> load -> save round-trips
bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch

MAGIC = b"STXCKPT\x01"
FORMAT_VERSION = 1


def to_jsonable(obj):
    """Recursively convert dataclasses/enums/paths/tuples to JSON-ready data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        }
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


@dataclass
class CheckpointData:
    """In-memory form of one checkpoint file."""

    kind: str
    config: dict
    step: int
    rng: dict
    tensors: dict[str, torch.Tensor]


def rng_snapshot(np_rng: np.random.Generator | None = None) -> dict:
    """JSON-ready snapshot of the torch (and optionally numpy) RNG state."""
    state = {"torch": torch.get_rng_state().numpy().tobytes().hex()}
    if np_rng is not None:
        state["numpy"] = to_jsonable(np_rng.bit_generator.state)
    return state


def rng_restore(state: dict, np_rng: np.random.Generator | None = None) -> None:
    if "torch" in state:
        raw = bytes.fromhex(state["torch"])
        torch.set_rng_state(torch.frombuffer(bytearray(raw), dtype=torch.uint8).clone())
    if np_rng is not None and "numpy" in state:
        np_rng.bit_generator.state = state["numpy"]


def save_checkpoint(
    path,
    kind: str,
    config: dict,
    step: int,
    rng: dict,
    tensors: dict[str, torch.Tensor],
) -> None:
    """Write one checkpoint file atomically (tmp file + rename)."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().contiguous().numpy()
        data = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "length": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": to_jsonable(config),
        "step": int(step),
        "rng": to_jsonable(rng),
        "params": entries,
    }
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(encoded)))
        f.write(encoded)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format version {header.get('format_version')}"
            )
        body = f.read()
    tensors = {}
    for entry in header["params"]:
        start, length = entry["offset"], entry["length"]
        arr = np.frombuffer(body[start : start + length], dtype=entry["dtype"])
        arr = arr.reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr)
    return CheckpointData(
        kind=header["kind"],
        config=header["config"],
        step=header["step"],
        rng=header["rng"],
        tensors=tensors,
    )
