import struct
from typing import Union

import numpy as np
import pandas as pd

from ._typing import ReadMatrixBuffer, WriteMatrixBuffer
from .buffer import bufferize, is_path
from .exceptions import MatrixFormatError

__all__ = [
    "HeaderSegment",
    "DataSegment",
    "MatrixFile",
    "read_matrix",
    "read_vector",
    "write_matrix",
    "write_vector",
]

MAGIC = b"PFW1"


class HeaderSegment:
    """Fixed binary header: magic, row count, column count (little endian)."""

    format_ = "<4sQQ"
    size = struct.calcsize(format_)

    def __init__(self, rows: int, cols: int, magic: bytes = MAGIC) -> None:
        self.magic = magic
        self.rows = int(rows)
        self.cols = int(cols)

    def asdict(self):
        return {"rows": self.rows, "cols": self.cols}

    @property
    def data_size(self):
        return 8 * self.rows * self.cols

    @classmethod
    def from_bytes(cls, s: bytes, path="<buffer>"):
        if len(s) < cls.size:
            raise MatrixFormatError(path, "truncated header")
        magic, rows, cols = struct.unpack(cls.format_, s[: cls.size])
        if magic != MAGIC:
            raise MatrixFormatError(path, f"bad magic {magic!r}, expected {MAGIC!r}")
        return HeaderSegment(rows, cols, magic=magic)

    def to_bytes(self):
        return struct.pack(self.format_, self.magic, self.rows, self.cols)


class DataSegment:
    def __init__(self, values: np.ndarray) -> None:
        self.values = values

    def to_bytes(self):
        return np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, s: bytes, rows: int, cols: int, path="<buffer>"):
        expected = 8 * rows * cols
        if len(s) != expected:
            raise MatrixFormatError(
                path, f"payload has {len(s)} bytes, header announces {expected}"
            )
        values = np.frombuffer(s, dtype="<f8").astype(np.float64).reshape(rows, cols)
        return DataSegment(values)


class MatrixFile:
    def __init__(self, values: np.ndarray) -> None:
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.ndim != 2:
            raise ValueError(f"expected a 2-d array, got {values.ndim} dimensions")
        self.values = values
        self.hseg = HeaderSegment(*values.shape)
        self.dseg = DataSegment(values)

    @classmethod
    @bufferize
    def from_file(cls, filepath_or_buffer):
        path = getattr(filepath_or_buffer, "name", "<buffer>")
        header = HeaderSegment.from_bytes(
            filepath_or_buffer.read(HeaderSegment.size), path
        )
        data = DataSegment.from_bytes(
            filepath_or_buffer.read(header.data_size), header.rows, header.cols, path
        )
        if not np.all(np.isfinite(data.values)):
            raise MatrixFormatError(path, "matrix contains non-finite entries")
        return MatrixFile(data.values)

    @classmethod
    @bufferize
    def read_header_segment(cls, filepath_or_buffer):
        filepath_or_buffer.seek(0)
        path = getattr(filepath_or_buffer, "name", "<buffer>")
        return HeaderSegment.from_bytes(filepath_or_buffer.read(HeaderSegment.size), path)

    @bufferize(mode="wb")
    def export(self, filepath_or_buffer):
        filepath_or_buffer.write(self.hseg.to_bytes())
        filepath_or_buffer.write(self.dseg.to_bytes())


def _sniff_binary(path) -> bool:
    with open(path, "rb") as fp:
        return fp.read(len(MAGIC)) == MAGIC


def _read_csv_matrix(path) -> np.ndarray:
    try:
        frame = pd.read_csv(
            path, header=None, dtype=np.float64, float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise MatrixFormatError(path, f"malformed CSV ({e})") from e
    values = frame.to_numpy(dtype=np.float64)
    if values.size == 0:
        raise MatrixFormatError(path, "empty matrix")
    if not np.all(np.isfinite(values)):
        raise MatrixFormatError(path, "matrix contains non-finite or missing entries")
    return values


def read_matrix(filepath_or_buffer: Union[str, ReadMatrixBuffer]) -> np.ndarray:
    """
    Read a dense matrix from the binary ``PFW1`` format or from CSV.

    The format is detected from the leading magic bytes; anything else is
    parsed as CSV with one matrix row per line.

    :param filepath_or_buffer: path, or binary file-like object holding a
        ``PFW1`` matrix.
    :return: the matrix as a 2-d float64 array
    :rtype: numpy.ndarray
    """
    if not is_path(filepath_or_buffer):
        return MatrixFile.from_file(filepath_or_buffer).values
    try:
        binary = _sniff_binary(filepath_or_buffer)
    except OSError as e:
        raise MatrixFormatError(filepath_or_buffer, f"cannot open ({e.strerror})") from e
    if binary:
        return MatrixFile.from_file(filepath_or_buffer).values
    return _read_csv_matrix(filepath_or_buffer)


def read_vector(filepath_or_buffer: Union[str, ReadMatrixBuffer]) -> np.ndarray:
    values = read_matrix(filepath_or_buffer)
    if min(values.shape) != 1:
        raise MatrixFormatError(
            getattr(filepath_or_buffer, "name", filepath_or_buffer),
            f"expected a single row or column, got shape {values.shape}",
        )
    return values.ravel()


def write_matrix(
    filepath_or_buffer: Union[str, WriteMatrixBuffer], values, fmt: str = "binary"
) -> None:
    """
    Write a dense matrix.

    :param fmt: ``"binary"`` for the ``PFW1`` format, ``"csv"`` for decimal
        text with ``.`` as separator and full round-trip precision.
    """
    if fmt == "binary":
        MatrixFile(values).export(filepath_or_buffer)
    elif fmt == "csv":
        frame = pd.DataFrame(np.atleast_2d(np.asarray(values, dtype=np.float64)))
        frame.to_csv(filepath_or_buffer, header=False, index=False)
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def write_vector(filepath_or_buffer, values, fmt: str = "csv") -> None:
    write_matrix(
        filepath_or_buffer, np.asarray(values, dtype=np.float64).reshape(-1, 1), fmt=fmt
    )
