"""Pure-data binary container: JSON header followed by length-prefixed
little-endian numeric arrays.

Layout::

    magic (8 bytes) | u64 header length | header JSON (utf-8)
    | per array: u64 element count | raw little-endian payload |
    END_MARK (8 bytes)

The header lists each array's name, dtype and shape in payload order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

END_MARK = b"GIEND\x00\x00\x00"
_DTYPES = {"f8": "<f8", "i8": "<i8"}
_U64 = struct.Struct("<Q")


def write_container(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write header + arrays to *path* (temp file then rename)."""
    assert len(magic) == 8
    specs, payloads = [], []
    for name, a in arrays.items():
        a = np.asarray(a)
        code = "f8" if a.dtype.kind == "f" else "i8"
        specs.append({"name": name, "dtype": code, "shape": list(a.shape)})
        payloads.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    header = dict(header, arrays=specs)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
        with os.fdopen(fd, "wb") as fh:
            fh.write(magic)
            fh.write(_U64.pack(len(hbytes)))
            fh.write(hbytes)
            for spec, raw in zip(specs, payloads):
                fh.write(_U64.pack(int(np.prod(spec["shape"], dtype=np.int64))))
                fh.write(raw)
            fh.write(END_MARK)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if blob[:8] != magic:
        raise FormatError(f"{path}: bad magic bytes, not a {magic.rstrip(bytes(1)).decode()} file")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated file")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (hlen,) = _U64.unpack(take(8))
    try:
        header = json.loads(take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    arrays = {}
    for spec in header.get("arrays", []):
        (count,) = _U64.unpack(take(8))
        shape = tuple(spec["shape"])
        if count != int(np.prod(shape, dtype=np.int64)) or spec["dtype"] not in _DTYPES:
            raise FormatError(f"{path}: array {spec['name']!r} does not match its header")
        raw = take(count * 8)
        arrays[spec["name"]] = np.frombuffer(raw, dtype=_DTYPES[spec["dtype"]]).reshape(shape).astype(
            np.float64 if spec["dtype"] == "f8" else np.int64)
    if take(len(END_MARK)) != END_MARK or pos != len(blob):
        raise FormatError(f"{path}: trailing data or missing end marker")
    return header, arrays
