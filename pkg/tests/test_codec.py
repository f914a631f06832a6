import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from grasp_quality.codec import (
    TENSOR_MAGIC,
    ByteReader,
    decode_tensor,
    encode_tensor,
    read_tensor,
    write_tensor,
)
from grasp_quality.errors import DimensionError, FormatError, TruncatedFileError


def test_layout_is_little_endian_row_major():
    payload = encode_tensor(np.array([[1.0, 2.0]], dtype=np.float32))
    assert payload[:4] == TENSOR_MAGIC
    assert payload[4:6] == bytes([0, 2])
    assert struct.unpack("<2I", payload[6:14]) == (1, 2)
    assert struct.unpack("<2f", payload[14:]) == (1.0, 2.0)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_file_round_trip(tmp_path, rng, dtype):
    array = rng.normal(size=(2, 3, 4)).astype(dtype)
    write_tensor(tmp_path / "t.gft", array)
    loaded = read_tensor(tmp_path / "t.gft")
    assert loaded.dtype == dtype
    assert_array_equal(loaded, array)


def test_bad_magic_reports_offset():
    with pytest.raises(FormatError, match="offset 0"):
        decode_tensor(ByteReader(b"XXXX" + bytes(10)))


def test_truncated_payload_reports_offset():
    payload = encode_tensor(np.ones(4, dtype=np.float64))
    with pytest.raises(TruncatedFileError, match="offset 10"):
        decode_tensor(ByteReader(payload[:-1]))


def test_zero_extent_is_a_dimension_error():
    header = TENSOR_MAGIC + struct.pack("<BB2I", 0, 2, 3, 0)
    with pytest.raises(DimensionError):
        decode_tensor(ByteReader(header))


def test_unknown_dtype_code():
    with pytest.raises(FormatError):
        decode_tensor(ByteReader(TENSOR_MAGIC + struct.pack("<BBI", 7, 1, 1) + bytes(4)))


def test_trailing_bytes_are_rejected(tmp_path):
    (tmp_path / "t.gft").write_bytes(encode_tensor(np.ones(2, dtype=np.float32)) + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        read_tensor(tmp_path / "t.gft")


def test_integer_arrays_are_not_encodable():
    with pytest.raises(DimensionError):
        encode_tensor(np.arange(3))
