"""
MTF1 raw tensor files used as test and CLI fixtures.

Layout, little-endian: magic b"MTF1", u32 rank, rank x u32 extents, then the
row-major float64 payload.
"""
import struct

import numpy as np

from matting.shared.errors import MattingError, ShapeError

MAGIC = b"MTF1"


def encode_tensor(array) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + struct.pack(f"<I{data.ndim}I", data.ndim, *data.shape)
    return header + data.tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise MattingError("not an MTF1 tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header_len = 8 + 4 * rank
    if len(blob) < header_len:
        raise MattingError("truncated MTF1 header")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = blob[header_len:]
    if len(payload) != 8 * count:
        raise ShapeError(f"MTF1 payload holds {len(payload) // 8} values, header declares {count}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def write_tensor(path, array):
    with open(path, "wb") as f:
        f.write(encode_tensor(array))
    return path


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())
