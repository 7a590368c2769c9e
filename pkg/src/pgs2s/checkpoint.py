"""Binary checkpoints for trained models.

Layout (all little-endian)::

    magic    8 bytes   b"PGS2SCKP"
    version  uint32
    hlen     uint64    length of the JSON header
    header   hlen bytes, UTF-8 JSON
    payload  float64 arrays in header["arrays"] order, C-contiguous
    crc32    uint32 over every preceding byte

The header carries the cell kind, dimensions, scaler, training config and
the name/shape of each stored array, so a checkpoint is self-describing.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .auxmodels import DirectMlpModel, MsvrModel
from .data import ScalerParams
from .errors import CheckpointShapeError, CorruptCheckpointError, VersionMismatchError
from .rlpolicy import PolicyParams
from .s2s import SeqParams

MAGIC = b"PGS2SCKP"
VERSION = 1
_POOL_TYPES = {"MSVR": MsvrModel, "MLP": DirectMlpModel}


@dataclass
class Checkpoint:
    seq: SeqParams
    policy: PolicyParams | None = None
    scaler: ScalerParams | None = None
    config: dict = field(default_factory=dict)
    pool: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _collect(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    arrays = [(b.name, b.value) for b in ckpt.seq.blocks()]
    if ckpt.policy is not None:
        arrays += [(b.name, b.value) for b in ckpt.policy.blocks()]
    for model in ckpt.pool:
        arrays += [(f"pool.{model.name}.{k}", v) for k, v in model.arrays().items()]
    return arrays


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    arrays = _collect(ckpt)
    header = {
        "cell": ckpt.seq.kind,
        "m": ckpt.seq.m,
        "n_enc": ckpt.seq.n_enc,
        "n_dec": ckpt.seq.n_dec,
        "n_actions": ckpt.policy.n_actions if ckpt.policy is not None else None,
        "n_policy": ckpt.policy.n_hidden if ckpt.policy is not None else None,
        "pool": [m.name for m in ckpt.pool],
        "scaler": ckpt.scaler.to_dict() if ckpt.scaler is not None else None,
        "config": ckpt.config,
        "extra": ckpt.extra,
        "arrays": [{"name": n, "shape": list(np.shape(v))} for n, v in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = bytearray(MAGIC)
    buf += struct.pack("<IQ", VERSION, len(hbytes))
    buf += hbytes
    for _, v in arrays:
        buf += np.ascontiguousarray(v, dtype="<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(buf))
    tmp.replace(path)
    return path


def _read(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 16 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    version, hlen = struct.unpack("<IQ", raw[len(MAGIC):len(MAGIC) + 12])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {VERSION}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    off = len(MAGIC) + 12
    try:
        header = json.loads(body[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(body):
            raise CorruptCheckpointError(f"{path}: truncated payload at {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(body[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(body):
        raise CorruptCheckpointError(f"{path}: {len(body) - off} trailing bytes")
    return header, arrays


def load_checkpoint(path, expect: dict | None = None) -> Checkpoint:
    """Read a checkpoint; ``expect`` (e.g. ``{"cell": "gru", "n_enc": 32}``)
    is compared against the header and any mismatch raises
    :class:`CheckpointShapeError`."""
    header, arrays = _read(path)
    for k, v in (expect or {}).items():
        if v is not None and header.get(k) != v:
            raise CheckpointShapeError(f"checkpoint has {k}={header.get(k)!r}, expected {v!r}")
    seq = SeqParams.init(header["cell"], header["m"], header["n_enc"], header["n_dec"])
    _fill(seq.blocks(), arrays)
    policy = None
    if header.get("n_actions"):
        policy = PolicyParams.init(header["n_dec"], header["n_policy"], header["n_actions"])
        _fill(policy.blocks(), arrays)
    pool = []
    for name in header.get("pool", []):
        pre = f"pool.{name}."
        part = {k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)}
        if name not in _POOL_TYPES:
            raise CorruptCheckpointError(f"unknown pool model {name!r}")
        pool.append(_POOL_TYPES[name].from_arrays(part))
    scaler = ScalerParams.from_dict(header["scaler"]) if header.get("scaler") else None
    return Checkpoint(seq, policy, scaler, header.get("config", {}), pool, header.get("extra", {}))


def _fill(blocks, arrays):
    for b in blocks:
        if b.name not in arrays:
            raise CheckpointShapeError(f"checkpoint lacks parameter {b.name}")
        if arrays[b.name].shape != b.value.shape:
            raise CheckpointShapeError(f"{b.name}: stored shape {arrays[b.name].shape} != {b.value.shape}")
        b.value[...] = arrays[b.name]
