"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SPRKNET1"
    uint32  header length N
    N bytes UTF-8 JSON header (sorted keys)
    float32 arrays, C order, in the order listed by header["arrays"]
    uint32  CRC32 of every preceding byte

The header records the model and frontend configs, label map, init seed,
format version and, for every array, its name and shape. Arrays are the
trainable parameters followed by the batch-norm running statistics, in
``SparkNet.parameters()`` then ``SparkNet.buffers()`` order.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from sparknet import __version__
from sparknet.audio import MfccConfig
from sparknet.errors import CheckpointError, ShapeError
from sparknet.model import ModelConfig, SparkNet

MAGIC = b"SPRKNET1"
FORMAT_VERSION = 1


def _named_arrays(model: SparkNet) -> list[tuple[str, np.ndarray]]:
    arrays = [(name, p.value) for name, p in model.parameters().items()]
    arrays += list(model.buffers().items())
    return arrays


def encode_checkpoint(
    model: SparkNet,
    mfcc_config: MfccConfig,
    labels: list[str],
    extra: dict | None = None,
) -> bytes:
    arrays = _named_arrays(model)
    header = {
        "format_version": FORMAT_VERSION,
        "sparknet_version": __version__,
        "model_config": model.config.to_dict(),
        "mfcc_config": mfcc_config.to_dict(),
        "labels": list(labels),
        "init_seed": model.init_seed,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<I", len(head))
    body += head
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def save_checkpoint(
    path: str | Path,
    model: SparkNet,
    mfcc_config: MfccConfig,
    labels: list[str],
    extra: dict | None = None,
) -> None:
    Path(path).write_bytes(encode_checkpoint(model, mfcc_config, labels, extra))


def decode_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Validate and split a checkpoint blob into (header, arrays)."""
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a SparkNet checkpoint")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise CheckpointError("CRC mismatch: checkpoint is truncated or corrupted")
    pos = len(MAGIC)
    (head_len,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    try:
        header = json.loads(raw[pos : pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from exc
    pos += head_len
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * n
        if end > len(raw) - 4:
            raise CheckpointError(f"array {spec['name']} runs past end of file")
        arrays[spec["name"]] = np.frombuffer(raw[pos:end], dtype="<f4").reshape(shape).astype(np.float32)
        pos = end
    if pos != len(raw) - 4:
        raise CheckpointError("trailing bytes after declared arrays")
    return header, arrays


def load_state(model: SparkNet, arrays: dict[str, np.ndarray]) -> None:
    """Copy arrays into ``model`` in place; any name or shape mismatch is a ShapeError."""
    targets = dict(_named_arrays(model))
    missing = sorted(set(targets) - set(arrays))
    unexpected = sorted(set(arrays) - set(targets))
    if missing or unexpected:
        raise ShapeError(f"checkpoint arrays do not match model: missing {missing}, unexpected {unexpected}")
    for name, target in targets.items():
        if arrays[name].shape != target.shape:
            raise ShapeError(f"{name}: checkpoint shape {arrays[name].shape} != model shape {target.shape}")
    for name, target in targets.items():
        target[...] = arrays[name]


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[SparkNet, dict]:
    """Rebuild the model stored at ``path``.

    With ``expected`` given, the stored arrays are loaded into a model built
    from that config instead, so a channel-count mismatch raises ShapeError.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from exc
    header, arrays = decode_checkpoint(raw)
    stored = ModelConfig(**header["model_config"])
    model = SparkNet(expected or stored, init_seed=header["init_seed"], dtype=np.float32)
    load_state(model, arrays)
    return model, header


def mfcc_config_from_header(header: dict) -> MfccConfig:
    return MfccConfig(**header["mfcc_config"])
