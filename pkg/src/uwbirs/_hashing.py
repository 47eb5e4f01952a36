"""Stable content hashing for scene / spectrum / beamformer identities."""

from __future__ import annotations

import hashlib

import numpy as np


def _feed(h: "hashlib._Hash", part: object) -> None:
    if isinstance(part, np.ndarray):
        h.update(b"arr:")
        h.update(str(part.dtype).encode())
        h.update(str(part.shape).encode())
        h.update(np.ascontiguousarray(part).tobytes())
    elif isinstance(part, (tuple, list)):
        h.update(b"seq:")
        for item in part:
            _feed(h, item)
        h.update(b";")
    elif isinstance(part, float):
        h.update(repr(part).encode())
    else:
        h.update(repr(part).encode())
    h.update(b"|")


def digest(*parts: object) -> str:
    """Hex digest that is identical across runs for identical inputs."""
    h = hashlib.sha256()
    for part in parts:
        _feed(h, part)
    return h.hexdigest()
