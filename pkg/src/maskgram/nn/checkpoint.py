"""Binary record container shared by model checkpoints, codecs and codebooks.

Layout (all integers little-endian)::

    b"MSKG" | u32 version | u32 count | count x record
    record := u32 name_len | name (utf-8) | u8 dtype | u32 rank | rank x u64 dim | raw data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..errors import ArtifactError

MAGIC = b"MSKG"
FORMAT_VERSION = 1

_DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
    4: np.dtype("u1"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt.kind == "f":
        return 1 if dt.itemsize == 4 else 2
    if dt.kind in "iu" and dt.itemsize > 1 or dt.kind == "b":
        return 3
    if dt == np.uint8:
        return 4
    raise ArtifactError(f"unsupported dtype {arr.dtype}")


def pack_json(obj: Any) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray) -> Any:
    return json.loads(bytes(np.asarray(arr, np.uint8)).decode())


def encode_records(records: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        code = _code_for(arr)
        data = np.asarray(arr, dtype=_DTYPES[code], order="C")  # keeps rank 0
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", code, data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def decode_records(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ArtifactError("not a MSKG file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise ArtifactError(f"unsupported MSKG format version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            code, rank = struct.unpack_from("<BI", buf, off)
            off += 5
            dims = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            dt = _DTYPES[code]
            n = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype=dt, count=n, offset=off).reshape(dims).copy()
            off += n * dt.itemsize
            out[name] = arr
    except (struct.error, KeyError, ValueError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"corrupt MSKG payload: {exc}") from exc
    if off != len(buf):
        raise ArtifactError("trailing bytes after last MSKG record")
    return out


def save_records(path: str | Path, records: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_records(records))


def load_records(path: str | Path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise ArtifactError(f"missing artifact: {p}")
    return decode_records(p.read_bytes())
