"""Input checks shared by the estimator classes, the pipeline and the CLI."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .jpeg.core import CoefficientPlane
from .jpeg.stream import parse
from .keys import StegoKey


def check_plane(X) -> CoefficientPlane:
    """Accept a plane, a JPEG byte string or a path to a JPEG file."""
    if isinstance(X, CoefficientPlane):
        if X.coeffs.size == 0:
            raise ValueError("the coefficient plane is empty")
        return X
    if isinstance(X, (bytes, bytearray)):
        return parse(bytes(X)).plane
    if isinstance(X, (str, Path)):
        return parse(Path(X).read_bytes()).plane
    raise TypeError(f"expected a CoefficientPlane, JPEG bytes or a path, got {type(X).__name__}")


def check_bits(message) -> np.ndarray:
    """Message as a flat uint8 array of bits. Byte strings are unpacked MSB first."""
    if isinstance(message, (bytes, bytearray)):
        return np.unpackbits(np.frombuffer(bytes(message), dtype=np.uint8))
    bits = np.asarray(message)
    if bits.size == 0:
        return np.zeros(0, dtype=np.uint8)
    if bits.ndim != 1:
        raise ValueError("message bits must be one-dimensional")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("message bits must be 0 or 1")
    return bits.astype(np.uint8)


def bits_to_bytes(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 8:
        raise ValueError("bit count is not a multiple of 8")
    return np.packbits(bits).tobytes()


def check_key(key) -> StegoKey:
    if key is None:
        raise ValueError("a stego key is required")
    return StegoKey(key)

