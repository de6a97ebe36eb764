"""NDT container round-trips and corruption handling."""

import numpy as np
import pytest

from graddistill import read_ndt, write_ndt
from graddistill.errors import FormatError


def test_float64_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 4, 5))
    path = tmp_path / "a.ndt"
    write_ndt(path, arr)
    back = read_ndt(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_uint32_round_trip(tmp_path):
    arr = np.arange(17, dtype=np.uint32)
    path = tmp_path / "labels.ndt"
    write_ndt(path, arr)
    back = read_ndt(path)
    assert back.dtype == np.uint32
    assert np.array_equal(back, arr)


def test_header_layout(tmp_path):
    path = tmp_path / "b.ndt"
    write_ndt(path, np.zeros((2, 3)))
    blob = path.read_bytes()
    assert blob[:4] == b"NDT1"
    assert blob[4] == 1  # float64 code
    assert blob[5] == 2  # ndim
    assert blob[6:8] == b"\x00\x00"
    assert int.from_bytes(blob[8:16], "little") == 2
    assert int.from_bytes(blob[16:24], "little") == 3
    assert len(blob) == 24 + 6 * 8


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ndt"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(FormatError, match="magic"):
        read_ndt(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ndt"
    write_ndt(path, np.zeros(4))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError, match="payload"):
        read_ndt(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "dtype.ndt"
    write_ndt(path, np.zeros(2))
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="dtype"):
        read_ndt(path)


def test_error_names_offending_file(tmp_path):
    path = tmp_path / "named.ndt"
    path.write_bytes(b"NOPE")
    with pytest.raises(FormatError, match="named.ndt"):
        read_ndt(path)
