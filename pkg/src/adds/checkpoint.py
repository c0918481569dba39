"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    8 bytes   magic "ADDSCKP1"
    u32       format version (currently 1)
    u32 + n   config JSON (canonical, sorted keys)
    32 bytes  sha256 of the config JSON
    u32 + n   meta JSON: epoch, optimizer step, RNG stream states, loss history
    u32       blob count
    per blob: u16 name length, name, u32 rows, u32 cols, rows*cols float32 LE

Weight tensors are stored under their parameter names; Adam moments under
"opt.m.<name>" / "opt.v.<name>". Save -> load -> save is byte-identical.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError
from .training import Checkpoint

CHECKPOINT_MAGIC = b"ADDSCKP1"
CHECKPOINT_VERSION = 1


def _write_blob(parts, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    arr2 = np.atleast_2d(np.asarray(arr, dtype="<f4"))
    parts.append(struct.pack("<H", len(raw)))
    parts.append(raw)
    parts.append(struct.pack("<II", arr2.shape[0], arr2.shape[1]))
    parts.append(arr2.tobytes())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    config_json = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    meta_json = json.dumps(
        {
            "epoch": ckpt.epoch,
            "opt_step": ckpt.opt_step,
            "rng": ckpt.rng,
            "loss_history": ckpt.loss_history,
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<I", len(config_json)))
    parts.append(config_json)
    parts.append(hashlib.sha256(config_json).digest())
    parts.append(struct.pack("<I", len(meta_json)))
    parts.append(meta_json)
    blobs = list(ckpt.weights.items())
    blobs += [(f"opt.m.{n}", a) for n, a in ckpt.opt_m.items()]
    blobs += [(f"opt.v.{n}", a) for n, a in ckpt.opt_v.items()]
    parts.append(struct.pack("<I", len(blobs)))
    for name, arr in blobs:
        _write_blob(parts, name, arr)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated checkpoint while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(8, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    config_json = r.take(r.u32("config length"), "config")
    stored_hash = r.take(32, "config hash")
    if hashlib.sha256(config_json).digest() != stored_hash:
        raise FormatError("config hash mismatch")
    config = json.loads(config_json)
    meta = json.loads(r.take(r.u32("meta length"), "meta"))
    n_blobs = r.u32("blob count")
    weights, opt_m, opt_v = {}, {}, {}
    for _ in range(n_blobs):
        name = r.take(r.u16("blob name length"), "blob name").decode("utf-8")
        rows = r.u32("blob rows")
        cols = r.u32("blob cols")
        arr = np.frombuffer(
            r.take(4 * rows * cols, f"blob {name}"), dtype="<f4"
        ).reshape(rows, cols).copy()
        if name.startswith("opt.m."):
            opt_m[name[6:]] = arr
        elif name.startswith("opt.v."):
            opt_v[name[6:]] = arr
        else:
            weights[name] = arr
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes in checkpoint")
    return Checkpoint(
        config=config,
        config_hash=hashlib.sha256(config_json).hexdigest(),
        epoch=meta["epoch"],
        weights=weights,
        opt_m=opt_m,
        opt_v=opt_v,
        opt_step=meta["opt_step"],
        rng=meta["rng"],
        loss_history=meta["loss_history"],
    )
