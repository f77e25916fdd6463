"""Binary checkpoints.

Layout (all integers little-endian):
    magic  b"DPCONVCK" | u32 format version | 32-byte sha256 of the config JSON
    u32 config length | config JSON (utf-8, sorted keys)
    u32 blob count | per blob: u16 name length, name, u8 ndim, u32 dims..., f64 data
"""
import hashlib
import json
import struct

import numpy as np

MAGIC = b"DPCONVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_digest(config_dict):
    return hashlib.sha256(canonical_json(config_dict)).digest()


def canonical_json(config_dict):
    return json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, config_dict, params):
    cfg = canonical_json(config_dict)
    parts = [MAGIC, struct.pack("<I", VERSION), hashlib.sha256(cfg).digest(),
             struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")  # keeps 0-d shapes, unlike ascontiguousarray
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config=None):
    """Returns (config dict, {name: array}); raises CheckpointError on any inconsistency."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a dpconv checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    cfg_bytes = r.take(n)
    if hashlib.sha256(cfg_bytes).digest() != digest:
        raise CheckpointError("config digest mismatch: checkpoint header is corrupt")
    try:
        config = json.loads(cfg_bytes)
    except ValueError:
        raise CheckpointError("checkpoint config is not valid JSON") from None
    if expected_config is not None and config_digest(expected_config) != digest:
        raise CheckpointError("checkpoint was written for a different configuration")
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after the last parameter blob")
    return config, params
