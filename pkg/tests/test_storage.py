"""Tests for artifact storage and the blob container."""
import hashlib
import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.exceptions import IncompatibleCheckpointError, StorageError
from src.utils import blobfile
from src.utils.storage import (
    StorageBackend,
    artifact_sha256,
    check_writable,
    read_artifact,
    write_artifact,
    write_json,
)
from src.utils.storage.local import LocalStorageBackend


class TestLocalStorageBackend(unittest.TestCase):
    """Test cases for LocalStorageBackend."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.storage = LocalStorageBackend(self.temp_dir)

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_save_file_string(self):
        """Test saving string content."""
        self.storage.save_file("report.json", "{}")
        file_path = Path(self.temp_dir) / "report.json"
        self.assertTrue(file_path.exists())
        self.assertEqual(file_path.read_text(), "{}")

    def test_save_file_bytes(self):
        """Test saving bytes content."""
        self.storage.save_file("weights.bin", b"\x00\x01")
        self.assertEqual((Path(self.temp_dir) / "weights.bin").read_bytes(), b"\x00\x01")

    def test_save_file_nested_path(self):
        """Test saving file in nested directory."""
        self.storage.save_file("runs/a/weights.bin", b"x")
        self.assertTrue((Path(self.temp_dir) / "runs" / "a" / "weights.bin").exists())

    def test_overwrite_leaves_no_temporaries(self):
        """Atomic writes replace the target and clean up their temp file."""
        self.storage.save_file("a.bin", b"first")
        self.storage.save_file("a.bin", b"second")
        self.assertEqual(self.storage.get_file("a.bin"), b"second")
        self.assertEqual(os.listdir(self.temp_dir), ["a.bin"])

    def test_exists(self):
        """Test file existence check."""
        self.storage.save_file("a.bin", b"x")
        self.assertTrue(self.storage.exists("a.bin"))
        self.assertFalse(self.storage.exists("b.bin"))

    def test_get_file_nonexistent(self):
        """Test retrieving nonexistent file."""
        self.assertIsNone(self.storage.get_file("missing.bin"))

    def test_unsupported_content(self):
        """Only str and bytes can be written."""
        with self.assertRaises(ValueError):
            self.storage.save_file("a.bin", 42)

    def test_sanitize_path(self):
        """Test path sanitization."""
        safe_path = str(self.storage._sanitize_path("../../../etc/passwd"))
        self.assertNotIn("..", safe_path)
        self.assertFalse(safe_path.startswith('/'))
        with self.assertRaises(StorageError):
            self.storage._sanitize_path("../..")

    def test_check_writable_rejects_file_parent(self):
        """A path below a regular file cannot be written."""
        self.storage.save_file("plain", b"x")
        with self.assertRaises(StorageError):
            self.storage.check_writable("plain/child.bin")

    def test_save_json_sorts_keys(self):
        self.storage.save_json("report.json", {'b': 1, 'a': [1.5, None]})
        text = (Path(self.temp_dir) / "report.json").read_text()
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(json.loads(text), {'a': [1.5, None], 'b': 1})

    def test_file_sha256(self):
        self.storage.save_file("a.bin", b"abc")
        self.assertEqual(self.storage.file_sha256("a.bin"), hashlib.sha256(b"abc").hexdigest())
        with self.assertRaises(StorageError):
            self.storage.file_sha256("missing.bin")

    def test_backends_must_check_writability(self):
        class ReadOnly(StorageBackend):
            def save_file(self, file_path, content):
                pass

            def exists(self, file_path):
                return False

            def get_file(self, file_path):
                return None

        with self.assertRaises(TypeError):
            ReadOnly()


class TestArtifactHelpers(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_write_and_read(self):
        path = os.path.join(self.temp_dir, "out", "x.txt")
        check_writable(path)
        write_artifact(path, "hello")
        self.assertEqual(read_artifact(path), b"hello")
        self.assertIsNone(read_artifact(os.path.join(self.temp_dir, "nope.txt")))

    def test_json_and_hash_helpers(self):
        path = os.path.join(self.temp_dir, "run.manifest.json")
        write_json(path, {'seed': 3})
        self.assertEqual(json.loads(read_artifact(path)), {'seed': 3})
        self.assertEqual(artifact_sha256(path), hashlib.sha256(read_artifact(path)).hexdigest())


class TestBlobFile(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, "blob.bin")
        self.entries = {
            'a': np.arange(6, dtype=np.float32).reshape(2, 3),
            'h': np.eye(3, dtype=np.float64),
            'idx': np.array([3, 1, 2], dtype=np.int32),
        }

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_round_trip_preserves_values_and_dtypes(self):
        """Entries, their order, dtypes and metadata survive a save/load."""
        digest = blobfile.save(self.path, self.entries, {'kind': 'test', 'n': 3})
        entries, meta = blobfile.load(self.path)
        self.assertEqual(list(entries), ['a', 'h', 'idx'])
        for name, arr in self.entries.items():
            self.assertEqual(entries[name].dtype, arr.dtype)
            np.testing.assert_array_equal(entries[name], arr)
        self.assertEqual(meta, {'kind': 'test', 'n': 3})
        self.assertEqual(digest, blobfile.file_hash(self.path))

    def test_same_content_same_hash(self):
        first = blobfile.save(self.path, self.entries, {'k': 1})
        second = blobfile.save(os.path.join(self.temp_dir, "b.bin"), self.entries, {'k': 1})
        self.assertEqual(first, second)

    def test_truncated_file_rejected(self):
        blobfile.save(self.path, self.entries, {})
        data = Path(self.path).read_bytes()
        Path(self.path).write_bytes(data[:-4])
        with self.assertRaises(IncompatibleCheckpointError):
            blobfile.load(self.path)

    def test_corrupted_blob_rejected(self):
        blobfile.save(self.path, self.entries, {})
        data = bytearray(Path(self.path).read_bytes())
        data[-1] ^= 0xFF
        Path(self.path).write_bytes(bytes(data))
        with self.assertRaises(IncompatibleCheckpointError):
            blobfile.load(self.path)

    def test_bad_magic_rejected(self):
        Path(self.path).write_bytes(b"NOTABLOB" + b"\x00" * 16)
        with self.assertRaises(IncompatibleCheckpointError):
            blobfile.load(self.path)

    def test_missing_file(self):
        with self.assertRaises(StorageError):
            blobfile.load(os.path.join(self.temp_dir, "missing.bin"))

    def test_unsupported_dtype(self):
        with self.assertRaises(StorageError):
            blobfile.encode({'x': np.zeros(2, dtype=np.int64)}, {})


if __name__ == '__main__':
    unittest.main()
