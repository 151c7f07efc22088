"""Binary checkpoint format for named float32 arrays.

Layout (little endian): magic ``GLCK``, version u32, count u32, then per entry
name length u32 + utf8 name, rank u32, dims u32 each, float32 data. A text
manifest of hyperparameters (``key=value`` lines) is appended length-prefixed
so a checkpoint is self-describing.
"""

import struct
from typing import Dict, Tuple

import numpy as np

from ..errors import CorruptFile

CHECKPOINT_MAGIC = b"GLCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray],
                    manifest: Dict[str, object]) -> None:
    """Write named arrays (converted to float32) plus the manifest text."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())
        text = "".join(f"{k}={manifest[k]}\n" for k in sorted(manifest))
        blob = text.encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile("bad checkpoint magic")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CorruptFile(f"unsupported checkpoint version {version}")
        off = 12
        arrays: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off)
            off += 4 * n
            arrays[name] = arr.reshape(dims).copy()
        (manifest_len,) = struct.unpack_from("<I", data, off)
        off += 4
        text = data[off:off + manifest_len].decode("utf-8")
        off += manifest_len
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CorruptFile(f"truncated or malformed checkpoint: {exc}") from exc
    if off != len(data):
        raise CorruptFile("trailing bytes after checkpoint payload")
    manifest = {}
    for line in text.splitlines():
        if line:
            key, _, value = line.partition("=")
            manifest[key] = value
    return arrays, manifest
