"""Binary checkpoint format for policy parameters.

Layout: 7-byte magic "SILGPO1", a little-endian uint32 header length, a JSON
header carrying the architecture descriptor, hyperparameters, and an ordered
tensor manifest (name + shape), then the raw float64 little-endian arrays in
manifest order. Loading verifies the magic, the manifest against the
architecture, and exact byte counts, so truncated or mismatched files fail
cleanly without partial state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .errors import CheckpointError
from .nnet import ArchSpec, expected_shapes, init_policy_params
from .training import Hyperparams

MAGIC = b"SILGPO1"


def save_checkpoint(
    params: ParamStore, arch: ArchSpec, hp: Hyperparams, path: str | Path
) -> None:
    manifest = [{"name": name, "shape": list(t.data.shape)} for name, t in params.items()]
    header = json.dumps(
        {
            "architecture": arch.to_dict(),
            "hyperparams": hp.to_dict(),
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, ArchSpec, Hyperparams]:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (header_len,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    offset = len(MAGIC) + 4
    if len(blob) < offset + header_len:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
        arch = ArchSpec(**header["architecture"])
        hp = Hyperparams(**header["hyperparams"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed header: {exc}") from exc

    shapes = expected_shapes(arch)
    names = [entry["name"] for entry in manifest]
    if sorted(names) != sorted(shapes):
        raise CheckpointError("tensor manifest does not match the architecture descriptor")
    offset += header_len
    state: dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        if shapes[entry["name"]] != shape:
            raise CheckpointError(
                f"shape mismatch for {entry['name']!r}: "
                f"file says {shape}, architecture implies {shapes[entry['name']]}"
            )
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"truncated tensor data at {entry['name']!r}")
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("trailing bytes after tensor data")

    params = init_policy_params(arch, seed=0)
    params.load_state_dict(state)
    return params, arch, hp
