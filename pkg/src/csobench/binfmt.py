"""Small binary container for model parameters.

Layout: 8-byte magic ``CSOBIN01``, uint32 little-endian header length, UTF-8 JSON
header, then each array as float64 little-endian in header order.  The header
holds ``kind``, scalar ``meta`` and the ``(name, shape)`` list of arrays.
"""

import json
import struct

import numpy as np

MAGIC = b"CSOBIN01"


def save_arrays(path, kind, arrays, meta=None):
    header = {
        "kind": kind,
        "meta": meta or {},
        "arrays": [[name, list(np.shape(a))] for name, a in arrays.items()],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path, kind=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a csobench binary file")
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + n].decode())
    if kind is not None and header["kind"] != kind:
        raise ValueError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")
    pos = 12 + n
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(blob):
        raise ValueError(f"{path}: trailing or missing bytes")
    return header["meta"], arrays
