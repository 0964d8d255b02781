"""Checkpoint container for model parameters and optimizer state.

Byte layout (all integers little-endian)::

    0   8 bytes   magic b"PCRLCKPT"
    8   uint32    format version (1)
    12  uint32    header length L
    16  L bytes   UTF-8 JSON header: {"model": {...hparams}, "optimizer":
                  {lr0, warmup, gamma, decay_steps, beta1, beta2, eps},
                  "step": t}
    ..  uint32    number of arrays
    then per array:
        uint16    name length n
        n bytes   UTF-8 name ("param/<key>", "adam_m/<key>", "adam_v/<key>")
        uint8     ndim
        ndim x uint32   shape
        prod(shape) x float32 (little-endian), C order

Arrays appear in the order they were written (parameter order, then first
moments, then second moments), so writing the same state twice yields
identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .io import FormatError
from .net import Adam, MetricModel

MAGIC = b"PCRLCKPT"
VERSION = 1


def dumps(model: MetricModel, opt: Adam | None = None) -> bytes:
    opt = opt or Adam()
    header = {
        "model": model.hparams(),
        "optimizer": {k: getattr(opt, k) for k in ("lr0", "warmup", "gamma", "decay_steps",
                                                   "beta1", "beta2", "eps")},
        "step": opt.t,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [(f"param/{k}", v) for k, v in model.params.items()]
    arrays += [(f"adam_m/{k}", v) for k, v in opt.m.items()]
    arrays += [(f"adam_v/{k}", v) for k, v in opt.v.items()]
    out = [MAGIC, struct.pack("<II", VERSION, len(hdr)), hdr, struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save(path, model: MetricModel, opt: Adam | None = None) -> None:
    Path(path).write_bytes(dumps(model, opt))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos, self.path)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes, path=None):
    """Return ``(model, opt)`` rebuilt from checkpoint bytes."""
    r = _Reader(data, path)
    if r.take(8, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", 0, path)
    version, hlen = r.unpack("<II", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8, path)
    hstart = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("corrupt checkpoint header", hstart, path) from None
    (count,) = r.unpack("<I", "array count")
    arrays = {}
    for _ in range(count):
        start = r.pos
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode("utf-8", "replace")
        (ndim,) = r.unpack("<B", "ndim")
        shape = r.unpack(f"<{ndim}I", "shape") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * size, f"array {name}")
        if name in arrays:
            raise FormatError(f"duplicate array {name}", start, path)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise FormatError("trailing bytes after last array", r.pos, path)
    hp = header["model"]
    model = MetricModel(u_a=hp["u_a"], lam=hp["lam"], seed=hp["seed"], u_c=hp.get("u_c", 3))
    for key in model.params:
        if f"param/{key}" not in arrays:
            raise FormatError(f"missing parameter {key}", r.pos, path)
        if arrays[f"param/{key}"].shape != model.params[key].shape:
            raise FormatError(f"shape mismatch for {key}", r.pos, path)
        model.params[key] = arrays[f"param/{key}"].copy()
    opt = Adam(**header["optimizer"])
    opt.t = int(header["step"])
    for name, arr in arrays.items():
        kind, _, key = name.partition("/")
        if kind == "adam_m":
            opt.m[key] = arr.copy()
        elif kind == "adam_v":
            opt.v[key] = arr.copy()
    return model, opt


def load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes(), path)
