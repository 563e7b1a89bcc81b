"""Binary checkpoints.

Layout (all integers little-endian uint32)::

    b"TACN" | version | descriptor length | descriptor (utf-8 ModelSpec text)
    | float32 parameter blocks, spec order, C order within each block
"""
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionError
from .layers import Model, ModelSpec

MAGIC = b"TACN"
VERSION = 1


def checkpoint_bytes(model):
    desc = model.spec.describe().encode("utf-8")
    blocks = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.flat_params())
    return MAGIC + struct.pack("<II", VERSION, len(desc)) + desc + blocks


def save_checkpoint(path, model):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    os.replace(tmp, path)


def load_checkpoint(path, expected_spec=None, dtype=np.float32):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(data, expected_spec, dtype)


def parse_checkpoint(data, expected_spec=None, dtype=np.float32):
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint: expected magic {MAGIC!r}, found {data[:4]!r}")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version mismatch: expected {VERSION}, found {version}")
    if len(data) < 12 + n:
        raise CheckpointError("checkpoint truncated inside the model description")
    text = data[12:12 + n].decode("utf-8", errors="replace")
    try:
        spec = ModelSpec.parse(text)
    except DimensionError as exc:
        raise CheckpointError(str(exc)) from exc
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(
            f"checkpoint architecture mismatch: expected {expected_spec.describe()!r}, found {text!r}"
        )
    template = Model.zeros(spec, dtype)
    offset = 12 + n
    params = []
    for ps in template.params:
        layer = []
        for p in ps:
            size = p.size * 4
            if offset + size > len(data):
                raise CheckpointError(
                    f"checkpoint truncated: need {offset + size} bytes, file has {len(data)}"
                )
            block = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
            layer.append(block.reshape(p.shape).astype(dtype))
            offset += size
        params.append(layer)
    if offset != len(data):
        raise CheckpointError(f"checkpoint has {len(data) - offset} trailing bytes")
    return Model(spec, params, dtype=dtype)
