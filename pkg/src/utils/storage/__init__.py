import os
import logging
from typing import Any, Optional, Tuple

from .base import StorageBackend
from .local import LocalStorageBackend

logger = logging.getLogger('ParaFormer')


def storage_for_path(path: str) -> Tuple[StorageBackend, str]:
    """Split a user-supplied path into a backend rooted at its directory and a file name."""
    directory, name = os.path.split(os.path.abspath(os.path.expanduser(path)))
    return LocalStorageBackend(directory), name


def write_artifact(path: str, content) -> None:
    """Atomically write bytes or text to `path`."""
    backend, name = storage_for_path(path)
    backend.save_file(name, content)


def write_json(path: str, payload: Any) -> None:
    backend, name = storage_for_path(path)
    backend.save_json(name, payload)


def read_artifact(path: str) -> Optional[bytes]:
    """Read a whole artifact, or None when it does not exist."""
    backend, name = storage_for_path(path)
    return backend.get_file(name)


def artifact_sha256(path: str) -> str:
    backend, name = storage_for_path(path)
    return backend.file_sha256(name)


def check_writable(path: str) -> None:
    backend, name = storage_for_path(path)
    backend.check_writable(name)


__all__ = [
    'StorageBackend',
    'LocalStorageBackend',
    'storage_for_path',
    'write_artifact',
    'write_json',
    'read_artifact',
    'artifact_sha256',
    'check_writable',
]
