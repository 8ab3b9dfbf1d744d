import os
import logging
import tempfile
from pathlib import Path
from typing import Optional, Union

from src.exceptions import StorageError
from .base import StorageBackend

logger = logging.getLogger('ParaFormer')


class LocalStorageBackend(StorageBackend):
    """Local filesystem storage with atomic writes."""

    def __init__(self, root_dir: str = "."):
        """
        Initialize local storage backend.

        Args:
            root_dir: Directory that relative artifact paths resolve against
        """
        self.root_dir = Path(root_dir)
        logger.debug(f"Initialized local storage at: {self.root_dir.absolute()}")

    def save_file(self, file_path: str, content: Union[str, bytes]) -> None:
        """
        Write content to a temporary sibling and rename it into place.

        A crash or an exception mid-write never leaves a partial artifact behind.

        Args:
            file_path: Relative path where the file should be saved
            content: Content to write (string or bytes)
        """
        if isinstance(content, str):
            content = content.encode('utf-8')
        elif not isinstance(content, (bytes, bytearray)):
            raise ValueError(f"Unsupported content type: {type(content)}")

        full_path = self.root_dir / self._sanitize_path(file_path)
        try:
            full_path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(prefix=f".{full_path.name}.", dir=full_path.parent)
            try:
                with os.fdopen(fd, 'wb') as f:
                    f.write(content)
                os.replace(tmp_name, full_path)
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
        except OSError as e:
            raise StorageError(f"Cannot write {full_path}: {e}") from e

        logger.debug(f"Saved to local file: {full_path}")

    def exists(self, file_path: str) -> bool:
        """
        Check if a file exists locally.

        Args:
            file_path: Relative path to the file

        Returns:
            True if file exists, False otherwise
        """
        return (self.root_dir / self._sanitize_path(file_path)).exists()

    def get_file(self, file_path: str) -> Optional[bytes]:
        """
        Retrieve file content from local storage.

        Args:
            file_path: Relative path to the file

        Returns:
            File content as bytes, or None if not found
        """
        full_path = self.root_dir / self._sanitize_path(file_path)

        if not full_path.exists():
            return None

        try:
            return full_path.read_bytes()
        except OSError as e:
            raise StorageError(f"Cannot read {full_path}: {e}") from e

    def check_writable(self, file_path: str) -> None:
        """Fail early, before any work is done, if the target directory cannot take the file."""
        parent = (self.root_dir / self._sanitize_path(file_path)).parent
        existing = parent
        while not existing.exists():
            if existing.parent == existing:
                break
            existing = existing.parent
        if not existing.is_dir() or not os.access(existing, os.W_OK):
            raise StorageError(f"Output location is not writable: {parent}")

    def _sanitize_path(self, file_path: str) -> Path:
        """
        Sanitize file path to prevent directory traversal.

        Args:
            file_path: Path to sanitize

        Returns:
            Sanitized relative Path object
        """
        path = file_path.replace('\\', '/').lstrip('/')

        parts = []
        for part in path.split('/'):
            if part == '..':
                # block directory traversal attempts
                if parts:
                    parts.pop()
            elif part and part != '.':
                parts.append(part)

        if not parts:
            raise StorageError(f"Empty artifact path: {file_path!r}")
        return Path(*parts)
