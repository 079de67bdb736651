"""Versioned binary checkpoint container.

Layout: 4-byte magic ``LGMK``, uint32 format version, uint32 header length,
UTF-8 JSON header (model config, vocabulary hash, tensor index), then the
concatenated raw little-endian float32 tensors. Loading validates tensor
shapes against the config and, when asked, the vocabulary hash, so a stale
artifact fails loudly instead of silently mis-scoring.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, CorruptCheckpoint
from .model import ModelConfig, Params, parameter_shapes

MAGIC = b"LGMK"
FORMAT_VERSION = 1


@dataclass(slots=True)
class Checkpoint:
    params: Params
    config: ModelConfig
    vocab_sha256: str
    sha256: str
    path: Path


def save_checkpoint(
    path: str | Path,
    params: Params,
    config: ModelConfig,
    vocab_sha256: str,
) -> str:
    """Write params as float32 tensors; returns the file's sha256 hex digest."""
    names = sorted(params)
    tensors = []
    offset = 0
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        raw = arr.tobytes()
        tensors.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32",
             "offset": offset, "nbytes": len(raw)}
        )
        payload.extend(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": config.to_dict(), "vocab_sha256": vocab_sha256, "tensors": tensors},
        sort_keys=True,
    ).encode("utf-8")
    blob = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + bytes(payload)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(
    path: str | Path,
    expected_vocab_sha256: str | None = None,
) -> Checkpoint:
    """Read a checkpoint back into float64 params, validating shapes."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        vocab_sha256 = header["vocab_sha256"]
        tensor_index = header["tensors"]
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad header ({exc})") from exc
    if expected_vocab_sha256 is not None and vocab_sha256 != expected_vocab_sha256:
        raise CheckpointMismatch(
            f"{path}: checkpoint was trained with a different vocabulary"
        )

    payload = blob[12 + header_len :]
    params: Params = {}
    for entry in tensor_index:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise CorruptCheckpoint(f"{path}: tensor {entry['name']} overruns payload")
        arr = np.frombuffer(payload[start : start + nbytes], dtype="<f4")
        params[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    expected = parameter_shapes(config)
    if set(params) != set(expected):
        raise CorruptCheckpoint(f"{path}: tensor set does not match config")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise CorruptCheckpoint(
                f"{path}: tensor {name} has shape {params[name].shape}, expected {shape}"
            )
    return Checkpoint(
        params=params,
        config=config,
        vocab_sha256=vocab_sha256,
        sha256=hashlib.sha256(blob).hexdigest(),
        path=path,
    )
