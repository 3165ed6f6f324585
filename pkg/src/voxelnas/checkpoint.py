"""Deterministic model checkpoints.

Layout: 8-byte magic, uint32 header length, JSON header (sorted keys: format
version, architecture descriptor, ordered array manifest), then the raw
float64 little-endian payloads back to back. No timestamps anywhere, so
identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numerics import BNState
from .search_space import ArchDescriptor, ChildNet, derive_child

MAGIC = b"VXNASCK1"
FORMAT_VERSION = 1


def _state_arrays(name: str, state: BNState):
    yield f"{name}.running_mean", state.running_mean
    yield f"{name}.running_var", state.running_var
    yield f"{name}.num_batches_tracked", np.array([state.num_batches_tracked], dtype=np.float64)


def _collect(model: ChildNet) -> list[tuple[str, np.ndarray]]:
    arrays = [(name, p.tensor.data) for name, p in model.named_parameters()]
    for name, ref in model.named_buffers():
        if isinstance(ref, BNState):
            arrays.extend(_state_arrays(name, ref))
        else:
            arrays.append((name, np.asarray(ref, dtype=np.float64)))
    return arrays


def save_checkpoint(path, model: ChildNet, arch: ArchDescriptor) -> None:
    arrays = _collect(model)
    header = {
        "format_version": FORMAT_VERSION,
        "arch": json.loads(arch.to_json()),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ChildNet, ArchDescriptor]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:8]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated at byte {len(blob)}")
    (header_len,) = struct.unpack("<I", blob[8:12])
    header_end = 12 + header_len
    if len(blob) < header_end:
        raise FormatError(f"{path}: header truncated at byte {len(blob)}")
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
        )
    arch = ArchDescriptor.from_json(json.dumps(header["arch"]))
    model = derive_child(arch.config, arch, seed=0)

    offset = header_end
    loaded: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise FormatError(f"{path}: payload truncated at byte {len(blob)}")
        loaded[spec["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after payload")

    for name, p in model.named_parameters():
        if name not in loaded:
            raise FormatError(f"{path}: missing parameter {name!r}")
        if loaded[name].shape != p.tensor.data.shape:
            raise FormatError(
                f"{path}: parameter {name!r} has shape {loaded[name].shape}, "
                f"expected {p.tensor.data.shape}"
            )
        p.tensor.data = loaded[name]
    for name, ref in model.named_buffers():
        if isinstance(ref, BNState):
            for key, _ in _state_arrays(name, ref):
                if key not in loaded:
                    raise FormatError(f"{path}: missing buffer {key!r}")
            ref.running_mean = loaded[f"{name}.running_mean"]
            ref.running_var = loaded[f"{name}.running_var"]
            ref.num_batches_tracked = int(loaded[f"{name}.num_batches_tracked"][0])
    return model, arch
