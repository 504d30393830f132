"""Writers/readers for the interchange formats the exporter speaks.

These mirror the published format specs (little-endian, versioned, no
compression); the engine package is deliberately not imported.
"""

import struct

import numpy as np

SRWB_MAGIC = b"SRWB"
SRVL_MAGIC = b"SRVL"
FORMAT_VERSION = 1


class ExportError(ValueError):
    pass


def write_srwb(path, entries) -> None:
    """entries: ordered mapping name -> float32 ndarray."""
    with open(path, "wb") as f:
        f.write(SRWB_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def read_srwb(path) -> dict:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SRWB_MAGIC:
        raise ExportError(f"{path}: bad SRWB magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise ExportError(f"{path}: unsupported SRWB version {version}")
    (count,) = struct.unpack_from("<I", raw, 6)
    offset = 10
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = raw[offset]
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        entries[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(dims)
        offset += size * 4
    return entries


def write_srvl(path, volume: np.ndarray) -> None:
    """volume: (t,h,w) float32."""
    t, h, w = volume.shape
    with open(path, "wb") as f:
        f.write(SRVL_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<III", t, h, w))
        f.write(np.ascontiguousarray(volume, dtype="<f4").tobytes())


def parse_kv_text(text: str) -> dict:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExportError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def dump_kv_text(fields: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in fields.items())
