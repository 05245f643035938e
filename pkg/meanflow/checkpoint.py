"""MFCK checkpoint files.

Layout (little-endian):
    b"MFCK" | u32 version | u32 n + n bytes UTF-8 config text
    live table | ema table
Each table is u32 count, then per tensor: u16 name length, name UTF-8,
u8 rank, u32 extents x rank, float64 data in C order. Tensor names are the
'/'-joined parameter paths.
"""
import struct
from typing import NamedTuple

import numpy as np
from flax import traverse_util
from jax import numpy as jnp

from . import config as config_lib
from . import errors
from .algorithms import mlp

MAGIC = b'MFCK'
VERSION = 1


class Checkpoint(NamedTuple):
    run_config: config_lib.RunConfig
    params: mlp.NetworkParams
    config_text: str


def _write_table(f, params):
    flat = traverse_util.flatten_dict(params, sep='/')
    f.write(struct.pack('<I', len(flat)))
    for name in sorted(flat):
        value = np.ascontiguousarray(np.asarray(flat[name], dtype='<f8'))
        encoded = name.encode('utf-8')
        f.write(struct.pack('<H', len(encoded)))
        f.write(encoded)
        f.write(struct.pack('<B', value.ndim))
        f.write(struct.pack(f'<{value.ndim}I', *value.shape))
        f.write(value.tobytes(order='C'))


def _read(f, fmt):
    size = struct.calcsize(fmt)
    data = f.read(size)
    if len(data) != size:
        raise errors.CheckpointError("Checkpoint is truncated.")
    return struct.unpack(fmt, data)


def _read_table(f):
    (count,) = _read(f, '<I')
    flat = {}
    for _ in range(count):
        (name_len,) = _read(f, '<H')
        name = f.read(name_len).decode('utf-8')
        (rank,) = _read(f, '<B')
        shape = _read(f, f'<{rank}I')
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        data = f.read(n_bytes)
        if len(data) != n_bytes:
            raise errors.CheckpointError(f"Checkpoint is truncated in tensor '{name}'.")
        flat[name] = jnp.asarray(np.frombuffer(data, dtype='<f8').reshape(shape))
    return traverse_util.unflatten_dict(flat, sep='/')


def save(path, run_config, params):
    """Writes live and EMA parameters plus the resolved config text."""
    text = config_lib.format_run_config(run_config).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<I', VERSION))
        f.write(struct.pack('<I', len(text)))
        f.write(text)
        _write_table(f, params.live)
        _write_table(f, params.ema)


def load(path):
    with open(path, 'rb') as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise errors.CheckpointError((f"{path} is not a meanflow checkpoint "
                                          f"(magic {magic!r})."))
        (version,) = _read(f, '<I')
        if version != VERSION:
            raise errors.CheckpointError((f"Checkpoint version {version} is not "
                                          f"supported; expected {VERSION}."))
        (text_len,) = _read(f, '<I')
        text = f.read(text_len).decode('utf-8')
        live = _read_table(f)
        ema = _read_table(f)
    return Checkpoint(run_config=config_lib.parse_run_config(text),
                      params=mlp.NetworkParams(live=live, ema=ema),
                      config_text=text)
