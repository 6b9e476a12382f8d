"""On-disk formats: checkpoints, raw tensor dumps, PGM images.

Checkpoint layout: a UTF-8 text manifest (magic line, one-line config JSON,
seed, one line per tensor with name/dtype/shape/byte-offset, END marker)
followed by a single contiguous little-endian float32 blob. Round trips are
bit-exact for float32 state.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import Tensor

CKPT_MAGIC = "segckpt v1"
DUMP_DTYPES = {"f32": "<f4", "f64": "<f8"}


def save_checkpoint(path, config: dict, seed: int, arrays: dict):
    path = Path(path)
    lines = [CKPT_MAGIC, "config " + json.dumps(config, sort_keys=True), f"seed {seed}"]
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"tensor {name} f32 {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    lines.append(f"blob {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    head, _, rest = raw.partition(b"\n")
    if head.decode("utf-8", "replace") != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    config = None
    seed = None
    entries = []
    while True:
        line, _, rest = rest.partition(b"\n")
        text = line.decode("utf-8")
        if text.startswith("config "):
            config = json.loads(text[len("config "):])
        elif text.startswith("seed "):
            seed = int(text.split()[1])
        elif text.startswith("tensor "):
            _, name, dtype, shape, offset = text.split(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            entries.append((name, dtype, dims, int(offset)))
        elif text.startswith("blob "):
            break
        else:
            raise DataError(f"{path}: malformed manifest line {text!r}")
    arrays = {}
    for name, dtype, dims, offset in entries:
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(rest, dtype="<f4", count=count, offset=offset).reshape(dims)
        arrays[name] = arr.astype(np.float32)
    return config, seed, arrays


def dump_tensor(path, t):
    """Raw debug dump: one text header line 'dtype d0 d1 ...' then LE floats."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    tag = "f64" if arr.dtype == np.float64 else "f32"
    header = " ".join([tag] + [str(d) for d in arr.shape]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype=DUMP_DTYPES[tag]).tobytes())


def load_tensor_dump(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        tag, dims = header[0], tuple(int(d) for d in header[1:])
        arr = np.frombuffer(fh.read(), dtype=DUMP_DTYPES[tag]).reshape(dims)
    return arr.copy()


def write_pgm(path, values01: np.ndarray):
    """8-bit binary PGM from an array of values in [0,1]."""
    arr = np.clip(np.asarray(values01, dtype=np.float64), 0.0, 1.0)
    img = np.round(arr * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
