"""Binary tensor container used for checkpoints and datasets.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"GAMR"
    offset 4   uint32    format version
    offset 8   uint64    manifest length L in bytes
    offset 16  L bytes   UTF-8 JSON manifest
    16 + L     payload   raw little-endian tensors, back to back

The manifest holds ``entries`` (``name``, ``shape``, ``dtype`` as a numpy
type string such as ``"<f8"``, ``offset`` and ``nbytes`` relative to the
payload start), ``payload_bytes``, and free-form metadata (``arch``,
``config_hash``, ``model``, ...).
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, VersionError
from .search_space import DiscreteArch

MAGIC = b"GAMR"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


def config_hash(config_dict):
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_container(path, tensors, meta=None):
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.require(arr, requirements="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(meta or {})
    manifest.update({"format": MAGIC.decode(), "version": VERSION,
                     "entries": entries, "payload_bytes": offset})
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        for raw in chunks:
            f.write(raw)


def read_container(path):
    """Return ``(tensors, manifest)``; raises a CheckpointError subclass on bad input."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a GAMR container")
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    _, version, mlen = _HEADER.unpack_from(data)
    if version > VERSION:
        raise VersionError(f"{path}: format version {version} is newer than supported {VERSION}")
    start = _HEADER.size + mlen
    if start > len(data):
        raise CorruptionError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[_HEADER.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"{path}: unreadable manifest ({e})") from None
    payload = memoryview(data)[start:]
    if len(payload) != manifest.get("payload_bytes"):
        raise CorruptionError(
            f"{path}: payload has {len(payload)} bytes, manifest says {manifest.get('payload_bytes')}")
    tensors, seen, spans = {}, set(), []
    for e in manifest["entries"]:
        name = e["name"]
        if name in seen:
            raise CorruptionError(f"{path}: duplicate entry {name!r}")
        seen.add(name)
        dtype = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if count * dtype.itemsize != e["nbytes"] or lo < 0 or hi > len(payload):
            raise CorruptionError(f"{path}: entry {name!r} out of bounds")
        spans.append((lo, hi, name))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=lo).reshape(tuple(e["shape"]))
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    spans.sort()
    for (_, hi, a), (lo, _, b) in zip(spans, spans[1:]):
        if lo < hi:
            raise CorruptionError(f"{path}: entries {a!r} and {b!r} overlap")
    return tensors, manifest


@dataclass
class Checkpoint:
    params: dict
    arch: DiscreteArch
    model: dict
    config_hash: str
    meta: dict


def save_checkpoint(path, params, arch=None, model=None, config_hash="", meta=None):
    """Write model weights plus the discrete architecture description."""
    extra = dict(meta or {})
    extra.update({"kind": "checkpoint", "arch": arch.to_dict() if arch is not None else None,
                  "model": model or {}, "config_hash": config_hash})
    write_container(path, params, extra)


def load_checkpoint(path):
    tensors, manifest = read_container(path)
    arch = manifest.get("arch")
    return Checkpoint(params=tensors, arch=DiscreteArch.from_dict(arch) if arch else None,
                      model=manifest.get("model", {}), config_hash=manifest.get("config_hash", ""),
                      meta=manifest)
