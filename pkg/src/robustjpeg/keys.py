"""Stego key handling and keyed pseudorandom permutations.

All randomness is drawn from Philox (a counter-based generator) keyed by a
128-bit subkey derived from the master secret with BLAKE2b. Raw 64-bit
outputs are turned into doubles as ``(x >> 11) * 2**-53`` and used for a
Fisher-Yates shuffle with ``j = floor(u * (i + 1))``, so the permutations do
not depend on numpy's higher-level sampling routines.
"""
from __future__ import annotations

import hashlib
import secrets

import numba
import numpy as np


class StegoKey:
    """Master secret shared by sender and receiver."""

    def __init__(self, secret):
        if isinstance(secret, StegoKey):
            secret = secret.secret
        elif isinstance(secret, str):
            try:
                secret = bytes.fromhex(secret)
            except ValueError:
                raise ValueError("key must be a hex string") from None
        if not secret:
            raise ValueError("key must not be empty")
        self.secret = bytes(secret)

    @classmethod
    def generate(cls, nbytes=16):
        return cls(secrets.token_bytes(nbytes))

    def hex(self):
        return self.secret.hex()

    def __repr__(self):
        return "StegoKey(<hidden>)"

    def __eq__(self, other):
        return isinstance(other, StegoKey) and secrets.compare_digest(self.secret, other.secret)

    def __hash__(self):
        return hash(self.secret)

    def subkey(self, label: str, *indices: int) -> int:
        """128-bit integer derived from the secret, a label and indices."""
        h = hashlib.blake2b(self.secret, digest_size=16, person=b"robustjpeg-v1")
        h.update(label.encode())
        for i in indices:
            h.update(int(i).to_bytes(8, "little", signed=True))
        return int.from_bytes(h.digest(), "little")


def keyed_uniforms(seed: int, shape):
    """Uniform doubles in [0, 1) from a Philox stream keyed by ``seed``."""
    bitgen = np.random.Philox(key=seed)
    count = int(np.prod(shape))
    raw = bitgen.random_raw(count) if count else np.zeros(0, dtype=np.uint64)
    return ((np.asarray(raw, dtype=np.uint64) >> np.uint64(11)) * 2.0**-53).reshape(shape)


@numba.njit(cache=True)
def _shuffle_rows(perms, u):
    count, size = perms.shape
    for r in range(count):
        for step in range(size - 1):
            i = size - 1 - step
            j = int(np.floor(u[r, step] * (i + 1)))
            hold = perms[r, i]
            perms[r, i] = perms[r, j]
            perms[r, j] = hold
    return perms


def keyed_permutations(seed: int, count: int, size: int):
    """``count`` independent permutations of ``range(size)``, one per row.

    Row ``r`` consumes draws ``[r * (size - 1), (r + 1) * (size - 1))`` of the
    stream, so its position in the stream is fixed by its index.
    """
    perms = np.tile(np.arange(size, dtype=np.int64), (count, 1))
    if size < 2 or count == 0:
        return perms
    return _shuffle_rows(perms, keyed_uniforms(seed, (count, size - 1)))


def keyed_permutation(seed: int, size: int):
    return keyed_permutations(seed, 1, size)[0]
