"""Checkpoint files.

Layout: 8-byte magic ``SPNCKPT1``, uint32 little-endian header length, UTF-8
JSON header (config, parameter names and shapes, hash, free-form extras),
then every parameter as float32 little-endian in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import LoadError
from .resnet import ResNet1D, ResNetConfig, param_shapes

MAGIC = b"SPNCKPT1"


def _hash(config: dict, layout: list) -> str:
    return hashlib.sha256(json.dumps({"config": config, "params": layout}, sort_keys=True).encode()).hexdigest()


def header_bytes(model: ResNet1D, extra: dict | None = None) -> bytes:
    cfg = model.cfg.to_dict()
    layout = [[name, list(p.shape)] for name, p in model.params.items()]
    header = {"config": cfg, "params": layout, "hash": _hash(cfg, layout), "extra": extra or {}}
    return json.dumps(header, sort_keys=True).encode()


def save_checkpoint(path, model: ResNet1D, extra: dict | None = None) -> Path:
    path = Path(path)
    header = header_bytes(model, extra)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return path


def load_checkpoint(path, expected: ResNetConfig | None = None) -> tuple[ResNet1D, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 12:
        raise LoadError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"checkpoint header is corrupt: {exc}") from None
    if _hash(header["config"], header["params"]) != header.get("hash"):
        raise LoadError("checkpoint header hash mismatch")
    cfg = ResNetConfig(**header["config"])
    if expected is not None and expected != cfg:
        diff = {k: (v, getattr(cfg, k)) for k, v in expected.to_dict().items() if getattr(cfg, k) != v}
        raise LoadError(f"checkpoint config differs from expected: {diff}")
    shapes = param_shapes(cfg)
    if [[n, list(s)] for n, s in shapes.items()] != header["params"]:
        raise LoadError("checkpoint parameter layout does not match its config")
    offset = 12 + hlen
    total = sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) - offset != 4 * total:
        raise LoadError(f"checkpoint payload has {len(raw) - offset} bytes, expected {4 * total}")
    params = {}
    for name, shape in shapes.items():
        count = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    return ResNet1D(cfg, params), header["extra"]
