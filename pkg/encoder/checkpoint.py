"""
Binary tensor container used for checkpoints and exported features.

Layout (little-endian):
    magic  b'SCFATNSR'
    uint32 format version
    uint32 tensor count
    per tensor: uint32 name length, utf-8 name, uint32 rank, rank x uint64 dims,
                row-major float64 data
"""
import struct
from pathlib import Path

import numpy as np

from core.exceptions import CheckpointError

from .network import ModelParams

MAGIC = b'SCFATNSR'
FORMAT_VERSION = 1


def save_tensors(path, tensors):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as fh:
        fh.write(MAGIC)
        fh.write(struct.pack('<II', FORMAT_VERSION, len(tensors)))
        for name, value in tensors.items():
            data = np.ascontiguousarray(value, dtype='<f8')
            encoded = name.encode('utf-8')
            fh.write(struct.pack('<I', len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack('<I', data.ndim))
            fh.write(struct.pack(f'<{data.ndim}Q', *data.shape))
            fh.write(data.tobytes(order='C'))
    return path


def _read(fh, size, path):
    chunk = fh.read(size)
    if len(chunk) != size:
        raise CheckpointError(f"truncated tensor file: {path}")
    return chunk


def load_tensors(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"tensor file not found: {path}")
    tensors = {}
    with path.open('rb') as fh:
        if _read(fh, len(MAGIC), path) != MAGIC:
            raise CheckpointError(f"not a tensor file (bad magic): {path}")
        version, count = struct.unpack('<II', _read(fh, 8, path))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {version}: {path}")
        for _ in range(count):
            (name_len,) = struct.unpack('<I', _read(fh, 4, path))
            name = _read(fh, name_len, path).decode('utf-8')
            (rank,) = struct.unpack('<I', _read(fh, 4, path))
            shape = struct.unpack(f'<{rank}Q', _read(fh, 8 * rank, path))
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(_read(fh, 8 * size, path), dtype='<f8')
            tensors[name] = data.astype(np.float64).reshape(shape)
        if fh.read(1):
            raise CheckpointError(f"trailing bytes after {count} tensors: {path}")
    return tensors


def save_checkpoint(path, params):
    return save_tensors(path, params.tensors)


def load_checkpoint(path, config=None):
    params = ModelParams(load_tensors(path))
    if config is not None:
        params.validate(config)
    return params
