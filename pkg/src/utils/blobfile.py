"""
Manifest + blob container shared by checkpoints and datasets.

Layout: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON manifest
(sorted keys), then one contiguous little-endian blob. The manifest lists every
entry's name, dtype, shape, byte offset and size, plus the blob length and its
SHA-256, so truncation and corruption are caught before anything is returned.
"""

import hashlib
import json
import logging
import struct
from collections import OrderedDict
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from src.exceptions import IncompatibleCheckpointError, StorageError
from src.utils.storage import artifact_sha256, read_artifact, write_artifact

logger = logging.getLogger('ParaFormer')

MAGIC = b'PFBLOB01'
HEADER = struct.Struct('<8sQ')

DTYPES = {
    'f32': np.dtype('<f4'),
    'f64': np.dtype('<f8'),
    'i32': np.dtype('<i4'),
}


def _dtype_code(arr: np.ndarray) -> str:
    for code, dtype in DTYPES.items():
        if arr.dtype == dtype or arr.dtype == dtype.newbyteorder('='):
            return code
    raise StorageError(f"Unsupported dtype for blob entry: {arr.dtype}")


def encode(entries: Mapping[str, np.ndarray], meta: Dict[str, Any]) -> bytes:
    """Serialize named arrays (in the given order) and metadata into bytes."""
    manifest_entries = []
    chunks = []
    offset = 0
    for name, arr in entries.items():
        code = _dtype_code(np.asarray(arr))
        raw = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        manifest_entries.append({
            'name': name,
            'dtype': code,
            'shape': list(np.shape(arr)),
            'offset': offset,
            'nbytes': len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b''.join(chunks)
    manifest = {
        'entries': manifest_entries,
        'meta': meta,
        'blob_nbytes': len(blob),
        'blob_sha256': hashlib.sha256(blob).hexdigest(),
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return HEADER.pack(MAGIC, len(manifest_bytes)) + manifest_bytes + blob


def decode(data: bytes) -> Tuple['OrderedDict[str, np.ndarray]', Dict[str, Any]]:
    """Parse bytes produced by `encode`; any inconsistency raises IncompatibleCheckpointError."""
    if len(data) < HEADER.size:
        raise IncompatibleCheckpointError("File too short to hold a header")
    magic, manifest_len = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise IncompatibleCheckpointError("Not a paraformer blob file (bad magic)")
    start = HEADER.size
    if len(data) < start + manifest_len:
        raise IncompatibleCheckpointError("Truncated manifest")
    try:
        manifest = json.loads(data[start:start + manifest_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IncompatibleCheckpointError(f"Malformed manifest: {e}") from e

    blob = data[start + manifest_len:]
    if len(blob) != manifest.get('blob_nbytes'):
        raise IncompatibleCheckpointError(
            f"Blob is {len(blob)} bytes, manifest expects {manifest.get('blob_nbytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get('blob_sha256'):
        raise IncompatibleCheckpointError("Blob checksum mismatch")

    entries: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    for entry in manifest.get('entries', []):
        try:
            dtype = DTYPES[entry['dtype']]
            shape = tuple(entry['shape'])
            offset, nbytes = entry['offset'], entry['nbytes']
        except KeyError as e:
            raise IncompatibleCheckpointError(f"Malformed manifest entry: {entry}") from e
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected or offset + nbytes > len(blob):
            raise IncompatibleCheckpointError(f"Entry {entry['name']} does not fit the blob")
        arr = np.frombuffer(blob, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
        entries[entry['name']] = arr.reshape(shape).astype(dtype.newbyteorder('='))
    return entries, manifest.get('meta', {})


def save(path: str, entries: Mapping[str, np.ndarray], meta: Dict[str, Any]) -> str:
    """Write a blob file atomically; returns the SHA-256 of the whole file."""
    data = encode(entries, meta)
    write_artifact(path, data)
    logger.debug(f"Wrote {len(entries)} entries ({len(data)} bytes) to {path}")
    return hashlib.sha256(data).hexdigest()


def load(path: str) -> Tuple['OrderedDict[str, np.ndarray]', Dict[str, Any]]:
    data = read_artifact(path)
    if data is None:
        raise StorageError(f"File not found: {path}")
    return decode(data)


def file_hash(path: str) -> str:
    return artifact_sha256(path)
