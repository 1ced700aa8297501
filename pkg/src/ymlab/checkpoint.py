"""Versioned binary container for simulation state.

Layout: 8-byte magic, little-endian uint32 version, uint32 header length,
UTF-8 JSON header, then the arrays listed in the header as raw little-endian
float64 in header order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import DomainError
from .simulation import SimState

MAGIC = b"YMLABCK\x00"
VERSION = 1

_ARRAYS = ("w", "modes", "lams", "jac", "eps", "eps_modes", "residual")
_SCALARS = (
    "tau", "t", "mu", "b", "beta", "dtau", "int_2beta", "tau0", "steps", "b_rate_est",
    "eps_minus_norm", "eps_minus_wsup", "eps_exterior_sup",
)


def encode(state: SimState, config_digest: str) -> bytes:
    arrays = {k: np.ascontiguousarray(getattr(state, k), dtype="<f8") for k in _ARRAYS}
    header = {
        "version": VERSION,
        "config_digest": config_digest,
        "scalars": {k: getattr(state, k) for k in _SCALARS},
        "arrays": [[k, list(a.shape)] for k, a in arrays.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
    parts += [a.tobytes() for a in arrays.values()]
    return b"".join(parts)


def decode(blob: bytes) -> tuple[SimState, str]:
    if blob[:8] != MAGIC:
        raise DomainError("not a ymlab checkpoint")
    version, n = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise DomainError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16 : 16 + n].decode())
    pos = 16 + n
    values = dict(header["scalars"])
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        pos += 8 * count
        values[name] = arr
    if pos != len(blob):
        raise DomainError("checkpoint has trailing or missing bytes")
    values["steps"] = int(values["steps"])
    return SimState(**values), header["config_digest"]


def write(path: str, state: SimState, config_digest: str) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    blob = encode(state, config_digest)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read(path: str) -> tuple[SimState, str]:
    with open(path, "rb") as fh:
        return decode(fh.read())
