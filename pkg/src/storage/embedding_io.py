"""
Binary embedding matrix format

Layout (all little-endian):
    4 bytes   magic b'SAVR'
    uint32    format version (1)
    uint64    rows
    uint64    dim
    float32   rows * dim values, row-major
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from errors import MatrixFormatError, MatrixLengthError, MatrixWriteError

logger = logging.getLogger(__name__)

MAGIC = b'SAVR'
FORMAT_VERSION = 1
_HEADER = struct.Struct('<4sIQQ')
HEADER_SIZE = _HEADER.size  # 24
_DTYPE = np.dtype('<f4')


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Dense float32 matrix: one row per token, image or region"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order='C', copy=True)
        if data.ndim != 2:
            raise MatrixFormatError(f"Embedding matrix must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise MatrixFormatError("Embedding matrix needs dim >= 1")
        if not np.all(np.isfinite(data)):
            raise MatrixFormatError("Embedding matrix contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> 'EmbeddingMatrix':
        return cls(np.asarray(rows, dtype=np.float64))

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def row(self, i: int) -> np.ndarray:
        """Row i widened to float64 for accumulation"""
        return self.data[i].astype(np.float64)

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def __repr__(self):
        return f"EmbeddingMatrix(rows={self.rows}, dim={self.dim})"


def encode_matrix(matrix: EmbeddingMatrix) -> bytes:
    """Serialize a matrix to the binary format"""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, matrix.rows, matrix.dim)
    return header + matrix.data.astype(_DTYPE, copy=False).tobytes(order='C')


def decode_matrix(payload: bytes, source: str = '<bytes>') -> EmbeddingMatrix:
    """Parse bytes produced by encode_matrix"""
    if len(payload) < HEADER_SIZE:
        if len(payload) >= 4 and payload[:4] != MAGIC:
            raise MatrixFormatError(f"{source}: bad magic {payload[:4]!r}")
        raise MatrixLengthError(f"{source}: file holds {len(payload)} bytes, header needs {HEADER_SIZE}")

    magic, version, rows, dim = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise MatrixFormatError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MatrixFormatError(f"{source}: unsupported version {version}")
    if dim < 1:
        raise MatrixFormatError(f"{source}: dim must be >= 1, header says {dim}")

    expected = rows * dim * _DTYPE.itemsize
    body = payload[HEADER_SIZE:]
    if len(body) != expected:
        raise MatrixLengthError(
            f"{source}: header claims {rows}x{dim} ({expected} bytes), payload has {len(body)} bytes"
        )

    values = np.frombuffer(body, dtype=_DTYPE).reshape(rows, dim)
    return EmbeddingMatrix(values)


def write_matrix(matrix: EmbeddingMatrix, path: Union[str, Path]) -> None:
    """
    Write a matrix file

    Args:
        matrix: Matrix to store
        path: Destination file

    Raises:
        MatrixWriteError: if the file cannot be written
    """
    path = Path(path)
    try:
        with open(path, 'wb') as f:
            f.write(encode_matrix(matrix))
    except OSError as e:
        raise MatrixWriteError(path, str(e)) from e
    logger.debug("Wrote %s to %s", matrix, path)


def read_matrix(path: Union[str, Path]) -> EmbeddingMatrix:
    """
    Read a matrix file written by write_matrix

    Raises:
        MatrixFormatError: wrong magic, version or non-finite values
        MatrixLengthError: payload shorter or longer than the header says
    """
    path = Path(path)
    with open(path, 'rb') as f:
        payload = f.read()
    return decode_matrix(payload, source=str(path))
