# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import hashlib
import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest import TestCase, mock

import numpy as np
import pytest
from joblib import cpu_count

from qflow.pdk import ExposureDefaults
from qflow.utils import (
    THREADS_VARIABLE,
    dump_json,
    mm_to_nm,
    resolve_n_jobs,
    sha256_bytes,
    sha256_file,
    sha256_lines,
    to_json,
    um_to_nm,
)


class TestUtils(TestCase):
    def test_resolve_n_jobs(self):
        """Test resolve_n_jobs function"""
        with mock.patch.dict(os.environ, {}, clear=True):
            assert resolve_n_jobs() == 1
            assert resolve_n_jobs(4) == 4
            assert resolve_n_jobs(0) == 1
            assert resolve_n_jobs(-1) == cpu_count()
        with mock.patch.dict(os.environ, {THREADS_VARIABLE: "2"}):
            assert resolve_n_jobs(8) == 2
            assert resolve_n_jobs(1) == 1
        with mock.patch.dict(os.environ, {THREADS_VARIABLE: "many"}):
            with self.assertLogs("qflow.utils", level="WARNING"):
                assert resolve_n_jobs(3) == 3

    def test_units(self):
        """Test unit conversions"""
        assert um_to_nm(2.5) == 2500
        assert um_to_nm(0.0004) == 0
        assert mm_to_nm(24.2) == 24_200_000
        assert np.array_equal(um_to_nm(np.array([1.0, 0.002])), np.array([1000, 2]))

    def test_checksums(self):
        """Test sha256 helpers"""
        assert sha256_bytes(b"qflow") == hashlib.sha256(b"qflow").hexdigest()
        assert sha256_lines(["b", "a"]) == sha256_lines(["a", "b"])
        assert sha256_lines(["a", "b"]) == hashlib.sha256(b"a\nb\n").hexdigest()
        assert sha256_lines(["a", "a"]) != sha256_lines(["a"])

        folder = tempfile.mkdtemp()
        try:
            path = Path(folder, "data.bin")
            path.write_bytes(b"\x00" * 3_000_000)
            assert sha256_file(path) == sha256_bytes(b"\x00" * 3_000_000)
        finally:
            shutil.rmtree(folder)

    def test_json(self):
        """Test deterministic JSON dumping"""
        data = {"b": np.int64(3), "a": [np.float64(0.5), np.arange(2)]}
        text = to_json(data)
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": [0.5, [0, 1]], "b": 3}

        exposure = ExposureDefaults(dose=120.0)
        assert json.loads(to_json(exposure))["dose"] == 120.0
        with pytest.raises(TypeError):
            to_json({"x": object()})

        folder = tempfile.mkdtemp()
        try:
            path = dump_json(data, Path(folder, "data.json"))
            assert path.read_text(encoding="utf-8") == text
        finally:
            shutil.rmtree(folder)


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
