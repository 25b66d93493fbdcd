"""Checkpoint container: JSON header plus raw float64 tensors.

Layout, in order:

* 8-byte magic ``SALVIT01``;
* little-endian uint32 header length;
* UTF-8 JSON header: model config, seed, training step, and a tensor
  manifest (name, shape) in serialization order;
* the tensors as raw little-endian float64 bytes, C order, concatenated
  in manifest order.

The manifest order is the canonical parameter order of the model module,
so the header alone is enough to slice the payload.
"""

import dataclasses
import json
import struct

import numpy as np

from .errors import FormatError
from .model import ModelConfig, param_order, param_shapes

MAGIC = b"SALVIT01"
FORMAT_VERSION = 1


def save_checkpoint(path, params: dict, cfg: ModelConfig, seed: int, step: int,
                    extra: dict | None = None) -> None:
    names = param_order(cfg)
    missing = [n for n in names if n not in params]
    if missing:
        raise FormatError(f"params missing tensors: {missing[:3]}...")
    header = {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(cfg),
        "seed": int(seed),
        "step": int(step),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def _read_header(fh, label) -> dict:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"{label}: not a checkpoint (bad magic {magic!r})")
    raw_len = fh.read(4)
    if len(raw_len) != 4:
        raise FormatError(f"{label}: truncated checkpoint")
    (hlen,) = struct.unpack("<I", raw_len)
    try:
        header = json.loads(fh.read(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{label}: corrupt checkpoint header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{label}: unsupported checkpoint version {header.get('format_version')}"
        )
    return header


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def load_checkpoint(path):
    """Returns (params, cfg, header)."""
    params = {}
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        cfg = ModelConfig(**header["config"])
        expected = param_order(cfg)
        manifest = [t["name"] for t in header["tensors"]]
        if manifest != expected:
            raise FormatError(f"{path}: tensor manifest does not match the config")
        shapes = param_shapes(cfg)
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            if shape != shapes[t["name"]]:
                raise FormatError(
                    f"{path}: tensor {t['name']} has shape {shape}, expected {shapes[t['name']]}"
                )
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise FormatError(f"{path}: truncated tensor payload at {t['name']}")
            params[t["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor payload")
    return params, cfg, header


def describe(path) -> str:
    """Human-oriented one-object JSON rendering of the header."""
    return json.dumps(read_header(path), indent=2, sort_keys=True)
