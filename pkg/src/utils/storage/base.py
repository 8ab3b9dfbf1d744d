import hashlib
import json
from abc import ABC, abstractmethod
from typing import Any, Optional, Union

from src.exceptions import StorageError


class StorageBackend(ABC):
    """
    Where run artifacts live: checkpoints, datasets, manifests and reports.

    Backends provide whole-file writes and reads plus an up-front writability
    check; JSON documents and content hashes are built on those primitives.
    """

    @abstractmethod
    def save_file(self, file_path: str, content: Union[str, bytes]) -> None:
        """Replace the file as a whole; readers never see a partial write."""

    @abstractmethod
    def exists(self, file_path: str) -> bool:
        ...

    @abstractmethod
    def get_file(self, file_path: str) -> Optional[bytes]:
        """Whole file content, or None if not found."""

    @abstractmethod
    def check_writable(self, file_path: str) -> None:
        """
        Refuse a target before any work is spent producing it.

        Raises:
            StorageError: the file could not be written at that location
        """

    def save_json(self, file_path: str, payload: Any) -> None:
        """Indented JSON with sorted keys; values JSON cannot hold are written with str()."""
        self.save_file(file_path, json.dumps(payload, indent=2, sort_keys=True, default=str))

    def file_sha256(self, file_path: str) -> str:
        data = self.get_file(file_path)
        if data is None:
            raise StorageError(f"File not found: {file_path}")
        return hashlib.sha256(data).hexdigest()
