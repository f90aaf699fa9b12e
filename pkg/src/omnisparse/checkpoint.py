"""Checkpoint files: magic line, JSON manifest, little-endian float64 payload.

Layout::

    b"OSPN1\\n" | u64 manifest length (LE) | manifest JSON | payload

The payload holds, per parameter in manifest order, its values then Adam m
then Adam v. The manifest records the payload's SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CorruptionError, VersionError
from .model import Architecture, SupernetModel

FORMAT = "OSPN1"
MAGIC = FORMAT.encode() + b"\n"
_LE_F64 = np.dtype("<f8")


def _manifest(model: SupernetModel, config=None, extracted=None, payload=b""):
    a = model.adam
    return {
        "format": FORMAT,
        "architecture": {
            "in_dim": model.arch.in_dim,
            "width": model.arch.width,
            "num_layers": model.arch.num_layers,
            "num_classes": model.arch.num_classes,
        },
        "step": model.step,
        "adam": {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step_count": a.step_count},
        # every random draw is derived from (seed, step); this pair is the whole RNG state
        "rng": {"scheme": "seed-step", "seed": None if config is None else config.get("seed"),
                "next_step": model.step},
        "config": config,
        "extracted_config": extracted,
        "tensors": [{"name": p.name, "shape": list(p.shape)} for p in model.params],
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }


def _payload(model: SupernetModel) -> bytes:
    chunks = []
    for p in model.params:
        for arr in (p.data, model.adam.m[p.name], model.adam.v[p.name]):
            chunks.append(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    return b"".join(chunks)


def dumps(model: SupernetModel, config=None, extracted=None) -> bytes:
    payload = _payload(model)
    manifest = json.dumps(
        _manifest(model, config, extracted, payload), sort_keys=True, separators=(",", ":")
    ).encode()
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + payload


def save_checkpoint(model: SupernetModel, path, config=None, extracted=None):
    """Write ``model``; ``config`` is a plain dict echoed into the manifest."""
    Path(path).write_bytes(dumps(model, config, extracted))


def loads(blob: bytes) -> SupernetModel:
    if not blob.startswith(b"OSPN"):
        raise CorruptionError("not a checkpoint file")
    if not blob.startswith(MAGIC):
        raise VersionError(f"unsupported checkpoint version {blob[:8]!r}")
    head = len(MAGIC)
    if len(blob) < head + 8:
        raise CorruptionError("truncated header")
    (mlen,) = struct.unpack("<Q", blob[head:head + 8])
    body = head + 8
    try:
        manifest = json.loads(blob[body:body + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable manifest: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise VersionError(f"unsupported checkpoint version {manifest.get('format')!r}")
    payload = blob[body + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise CorruptionError(
            f"payload has {len(payload)} bytes, manifest declares {manifest['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CorruptionError("payload checksum mismatch")

    arch = Architecture(**manifest["architecture"])
    expected = [(name, tuple(shape)) for name, shape in arch.param_shapes()]
    declared = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    if declared != expected:
        raise CorruptionError("tensor table does not match the architecture")
    flat = np.frombuffer(payload, dtype=_LE_F64)
    params, m, v = [], {}, {}
    pos = 0
    for name, shape in declared:
        size = int(np.prod(shape))
        vals = []
        for _ in range(3):
            vals.append(flat[pos:pos + size].reshape(shape).astype(np.float64))
            pos += size
        params.append(T.Param(name, vals[0]))
        m[name], v[name] = vals[1], vals[2]
    if pos != flat.size:
        raise CorruptionError("payload size does not match tensor table")
    adam = T.AdamState(m=m, v=v, **manifest["adam"])
    meta = {"config": manifest["config"], "extracted_config": manifest["extracted_config"]}
    return SupernetModel(arch, params, adam, meta)


def load_checkpoint(path) -> SupernetModel:
    """Load a model; ``model.meta`` carries the config echo and extraction info."""
    return loads(Path(path).read_bytes())
