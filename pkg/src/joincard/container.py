"""Sectioned little-endian binary container used by snapshots and checkpoints.

File layout: 4 magic bytes, format version (u32), section count (u32), then
for every section a tag (u16 length + utf-8 bytes), a payload length (u64)
and the payload itself.  Tags may repeat; section order is preserved.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Malformed, truncated, or mislabeled container file."""


class VersionMismatchError(ContainerError):
    """Container was written by an incompatible format version."""


def write_container(path, magic: bytes, sections: list[tuple[str, bytes]]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
        for tag, payload in sections:
            raw = tag.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def read_container(path, magic: bytes) -> list[tuple[str, bytes]]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12:
        raise ContainerError(f"{path}: truncated header")
    if data[:4] != magic:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    version, n_sections = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    sections = []
    off = 12
    for _ in range(n_sections):
        if off + 2 > len(data):
            raise ContainerError(f"{path}: truncated section tag")
        (tag_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + tag_len + 8 > len(data):
            raise ContainerError(f"{path}: truncated section header")
        tag = data[off : off + tag_len].decode("utf-8")
        off += tag_len
        (payload_len,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + payload_len > len(data):
            raise ContainerError(f"{path}: truncated payload for section {tag!r}")
        sections.append((tag, data[off : off + payload_len]))
        off += payload_len
    if off != len(data):
        raise ContainerError(f"{path}: {len(data) - off} trailing bytes after last section")
    return sections


def pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    header = json.dumps({"dtype": dt.str, "shape": list(arr.shape)}, sort_keys=True).encode()
    return struct.pack("<I", len(header)) + header + arr.astype(dt, copy=False).tobytes()


def unpack_array(payload: bytes) -> np.ndarray:
    if len(payload) < 4:
        raise ContainerError("truncated array header")
    (hlen,) = struct.unpack_from("<I", payload, 0)
    header = json.loads(payload[4 : 4 + hlen].decode())
    dt = np.dtype(header["dtype"])
    shape = tuple(header["shape"])
    arr = np.frombuffer(payload[4 + hlen :], dtype=dt)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise ContainerError("array payload size does not match declared shape")
    return arr.reshape(shape).copy()


def pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def unpack_json(payload: bytes):
    return json.loads(payload.decode())


def digest_sections(sections: list[tuple[str, bytes]]) -> str:
    h = hashlib.sha256()
    for tag, payload in sections:
        h.update(tag.encode())
        h.update(struct.pack("<Q", len(payload)))
        h.update(payload)
    return h.hexdigest()
