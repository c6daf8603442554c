"""Portable tensor container.

Layout::

    b"CUET0001"                      8-byte magic
    uint32 little-endian             header length in bytes
    b"dtype=f64;dims=B,H,W,C\\n"      UTF-8 header line
    raw little-endian values          row-major in dims order
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.core.errors import ConfigError, DataFormatError

MAGIC = b"CUET0001"
DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


def encode_tensor(array: np.ndarray, dtype: str = "f64") -> bytes:
    """Serialize an array; ``dtype="f32"`` is the compact checkpoint mode."""
    if dtype not in DTYPES:
        raise ConfigError(f"Unknown storage dtype '{dtype}' (expected one of {sorted(DTYPES)})")
    dims = ",".join(str(d) for d in array.shape)
    header = f"dtype={dtype};dims={dims}\n".encode("utf-8")
    payload = np.ascontiguousarray(array, dtype=DTYPES[dtype]).tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def decode_tensor(blob: bytes, path: Union[Path, None] = None) -> np.ndarray:
    """Parse a container produced by ``encode_tensor`` into a float64 array.

    Raises:
        DataFormatError: With the byte offset of the first malformed field
    """
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise DataFormatError("bad magic, expected CUET0001", path, 0)

    offset = len(MAGIC)
    if len(blob) < offset + 4:
        raise DataFormatError("truncated header length", path, offset)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4

    raw_header = blob[offset:offset + header_len]
    if len(raw_header) != header_len or not raw_header.endswith(b"\n"):
        raise DataFormatError("truncated or unterminated header line", path, offset)
    try:
        fields = dict(part.split("=", 1) for part in raw_header.decode("utf-8").strip().split(";"))
        dtype = DTYPES[fields["dtype"]]
        dims = tuple(int(d) for d in fields["dims"].split(",") if d != "")
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise DataFormatError(f"unreadable header ({e})", path, offset) from e
    offset += header_len

    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - offset != expected:
        raise DataFormatError(
            f"payload has {len(blob) - offset} bytes, header promises {expected}", path, offset
        )
    values = np.frombuffer(blob, dtype=dtype, offset=offset)
    return values.astype(np.float64).reshape(dims)


def save_tensor(path: Path, array: np.ndarray, dtype: str = "f64") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array, dtype))


def load_tensor(path: Path) -> np.ndarray:
    return decode_tensor(path.read_bytes(), path)
