"""Deterministic on-disk formats for sketches, partitionings and checkpoints.

All binary artifacts use a single self-describing container: a magic tag, a
JSON header (metadata plus an array manifest) and the raw array bytes in
manifest order. The writer is fully deterministic -- rerunning a command with
the same inputs produces byte-identical files, which the CLI relies on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSKETCH1\n"

# Bump when the container layout changes; readers reject unknown versions.
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a file is not a valid container or has a stale layout."""


def write_blob(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``meta`` and named arrays to ``path`` as one container file.

    Array insertion order is preserved and becomes the on-disk order, so the
    same call always yields identical bytes.
    """
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "arrays": manifest},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by :func:`write_blob`.

    Returns ``(meta, arrays)``. Fails loudly on a bad magic tag, an unknown
    format version, or truncated data.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: not a densketch container (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatError(
                f"{path}: unsupported format_version {header.get('format_version')!r}"
            )
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise FormatError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same float64."""
    return repr(float(x))
