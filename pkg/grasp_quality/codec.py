"""
Little-endian binary codec shared by checkpoints and dataset files

Tensor record layout (GFT1): magic, u8 dtype code (0=f32, 1=f64), u8 rank,
rank x u32 extents, then the raw elements in row-major order.
"""

import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import DimensionError, FormatError, TruncatedFileError

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"GFT1"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ByteReader:
    """Cursor over an in-memory buffer that reports offsets on failure"""

    def __init__(self, data: bytes, base_offset: int = 0):
        self.data = data
        self.offset = 0
        self.base_offset = base_offset

    @property
    def position(self) -> int:
        return self.base_offset + self.offset

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def read(self, count: int) -> bytes:
        if count > self.remaining:
            raise TruncatedFileError(
                f"needed {count} bytes, only {self.remaining} left", self.position
            )
        chunk = self.data[self.offset : self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def expect_magic(self, magic: bytes) -> None:
        position = self.position
        found = self.read(len(magic)) if self.remaining >= len(magic) else self.data[self.offset :]
        if found != magic:
            raise FormatError(f"bad magic {found!r}, expected {magic!r}", position)


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize a float32/float64 array as a GFT1 record"""
    array = np.asarray(array)
    if array.dtype not in CODES_BY_DTYPE:
        raise DimensionError(f"unsupported tensor dtype {array.dtype}")
    if array.ndim > 255:
        raise DimensionError(f"rank {array.ndim} does not fit the format")
    code = CODES_BY_DTYPE[array.dtype]
    header = TENSOR_MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(reader: ByteReader) -> np.ndarray:
    """Read one GFT1 record at the reader's cursor"""
    reader.expect_magic(TENSOR_MAGIC)
    position = reader.position
    code, rank = reader.unpack("<BB")
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", position)
    shape = reader.unpack(f"<{rank}I") if rank else ()
    if any(extent == 0 for extent in shape):
        raise DimensionError(f"zero extent in stored shape {shape} at byte {position}")
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    raw = reader.read(count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def write_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    reader = ByteReader(Path(path).read_bytes())
    array = decode_tensor(reader)
    if reader.remaining:
        raise FormatError(f"{reader.remaining} trailing bytes after tensor", reader.position)
    return array
