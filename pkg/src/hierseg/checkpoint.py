"""Binary tensor container ("HSEG") and the packed coverage-bitmap sidecar.

HSEG layout, all little-endian::

    b"HSEG"  u32 version  u32 count
    repeat count times:
        u32 name_len  name (utf-8)  u32 rank  u64 dims[rank]  f64 payload[prod(dims)]

Coverage sidecar ("HCOV") uses the same entry header but stores a packed
bit payload of ``ceil(prod(dims) / 8)`` bytes (``numpy.packbits`` order).
"""
import struct

import numpy as np

MAGIC = b"HSEG"
COV_MAGIC = b"HCOV"
VERSION = 1


class FormatError(ValueError):
    pass


def _pack_entries(magic, entries, payload):
    parts = [magic, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(payload(arr))
    return b"".join(parts)


def _unpack_entries(magic, buf, read_payload):
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = bytes(buf[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        arr, pos = read_payload(buf, pos, tuple(int(d) for d in dims))
        out[name] = arr
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes")
    return out


def dumps(tensors):
    """Serialize an ordered mapping name -> array to HSEG bytes."""
    arrs = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
    return _pack_entries(MAGIC, arrs, lambda a: a.astype("<f8").tobytes(order="C"))


def loads(buf):
    def read(b, pos, dims):
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(b, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(dims)
        return arr, pos + 8 * n
    return _unpack_entries(MAGIC, buf, read)


def save(path, tensors):
    with open(path, "wb") as f:
        f.write(dumps(tensors))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


def dumps_coverage(masks):
    arrs = {k: np.asarray(v, dtype=bool) for k, v in masks.items()}
    return _pack_entries(COV_MAGIC, arrs, lambda a: np.packbits(a.ravel()).tobytes())


def loads_coverage(buf):
    def read(b, pos, dims):
        n = int(np.prod(dims, dtype=np.int64))
        nbytes = (n + 7) // 8
        bits = np.unpackbits(np.frombuffer(b, dtype=np.uint8, count=nbytes, offset=pos))[:n]
        return bits.astype(bool).reshape(dims), pos + nbytes
    return _unpack_entries(COV_MAGIC, buf, read)
