"""Binary checkpoint format.

Layout (all integers little-endian uint32)::

    b'UTOK' | version | header_len | header JSON (UTF-8) | entry_count |
    entry* = name_len | name (UTF-8) | ndim | dim* | float32 payload

Optimizer moments are stored as ordinary entries named ``optim.m.<param>``
and ``optim.v.<param>``; per-parameter step counts live in the header.
"""
from dataclasses import dataclass, field
import json
import logging
import os
import struct

import numpy as np

from errors import CheckpointError

logger = logging.getLogger('unitok.checkpoint')

MAGIC = b'UTOK'
FORMAT_VERSION = 1
_U32 = struct.Struct('<I')
_PAYLOAD_DTYPE = np.dtype('<f4')


@dataclass
class Checkpoint:
    header: dict
    tensors: dict = field(default_factory=dict)

    @property
    def params(self):
        return {k: v for k, v in self.tensors.items() if not k.startswith('optim.')}

    @property
    def optimizer_arrays(self):
        return {k: v for k, v in self.tensors.items() if k.startswith('optim.')}

    @property
    def optimizer_steps(self):
        return dict(self.header.get('optimizer_steps', {}))

    def __repr__(self):
        return (f"<Checkpoint stage={self.header.get('stage')} step={self.header.get('step')} "
                f"entries={len(self.tensors)}>")


def _entry_bytes(name, array):
    encoded = name.encode('utf-8')
    array = np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE)
    parts = [_U32.pack(len(encoded)), encoded, _U32.pack(array.ndim)]
    parts.extend(_U32.pack(d) for d in array.shape)
    parts.append(array.tobytes())
    return b''.join(parts)


def save_checkpoint(path, params, header, optimizer=None):
    """Write parameters (and optionally optimizer state) to ``path`` atomically"""
    header = dict(header)
    tensors = {name: (p.data if hasattr(p, 'data') else p) for name, p in params.items()}
    if optimizer is not None:
        tensors.update(optimizer.state_arrays())
        header['optimizer_steps'] = dict(optimizer.state['t'])
    for name, array in tensors.items():
        if not np.all(np.isfinite(array)):
            raise CheckpointError(f"Refusing to save non-finite values in '{name}'")

    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    tmp_path = f'{path}.tmp'
    try:
        with open(tmp_path, 'wb') as handle:
            handle.write(MAGIC + _U32.pack(FORMAT_VERSION))
            handle.write(_U32.pack(len(header_bytes)) + header_bytes)
            handle.write(_U32.pack(len(tensors)))
            for name in sorted(tensors):
                handle.write(_entry_bytes(name, tensors[name]))
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint '{path}': {e}") from e
    logger.info(f"[CHECKPOINT] Saved {len(tensors)} entries to {path} "
                f"(stage={header.get('stage')}, step={header.get('step')})")
    return path


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, count):
        end = self.offset + count
        if end > len(self.blob):
            raise CheckpointError(f"Checkpoint '{self.path}' is truncated at byte {self.offset}")
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path):
    try:
        with open(path, 'rb') as handle:
            blob = handle.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint '{path}': {e}") from e

    reader = _Reader(blob, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"'{path}' is not a checkpoint (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} in '{path}'")
    try:
        header = json.loads(reader.take(reader.u32()).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header in '{path}': {e}") from e

    tensors = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode('utf-8')
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(count * _PAYLOAD_DTYPE.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).reshape(shape).astype(np.float32)
    if reader.offset != len(blob):
        raise CheckpointError(f"Trailing bytes after the last entry in '{path}'")

    logger.debug(f"[CHECKPOINT] Loaded {len(tensors)} entries from {path}")
    return Checkpoint(header=header, tensors=tensors)
