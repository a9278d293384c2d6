"""Binary syndrome-trellis codes with wet elements, and the optimal-embedding simulator.

The parity-check matrix ``H`` (m x n) is built from a keyed h x w submatrix
placed along the diagonal, one copy per message bit, shifted down one row
each time. Rows past ``m`` are cut off.

The first rows of such a matrix only see the columns of the first few
blocks, so a run of wet elements there makes the code unsolvable. Block
widths are therefore front-loaded: every block gets one column, and the
remaining ``n - m`` are split by cumulative floors of the weights
``1 + FRONT_BOOST * max(0, h - i) / h`` of block ``i``.

Columns are stored as integers: bit ``t`` of column ``j`` in block ``i`` is
the entry of row ``i + t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import EmbeddingInfeasible, InvalidLength
from .keys import keyed_uniforms

MAX_HEIGHT = 24
FRONT_BOOST = 3.0


@dataclass(frozen=True)
class StcParams:
    n: int
    m: int
    seed: int = 0
    height: int = 10

    def __post_init__(self):
        if not 1 <= self.height <= MAX_HEIGHT:
            raise ValueError(f"constraint height must be in [1, {MAX_HEIGHT}]")
        if self.n < 0 or self.m < 0:
            raise InvalidLength("lengths must be non-negative")
        if self.m > self.n:
            raise InvalidLength(f"message of {self.m} bits does not fit {self.n} cover elements")

    @property
    def max_width(self):
        return int(self.widths().max()) if self.m else 0

    def widths(self):
        if self.m == 0:
            return np.zeros(0, dtype=np.int64)
        i = np.arange(self.m)
        weight = 1.0 + FRONT_BOOST * np.maximum(0, self.height - i) / self.height
        # one column per block, the rest split by cumulative floors of the weights
        cum = np.concatenate([[0.0], np.cumsum(weight)])
        extra = self.n - self.m
        edges = np.floor(extra * cum / cum[-1] + 1e-9).astype(np.int64)
        edges[-1] = extra
        return 1 + np.diff(edges)

    def block_starts(self):
        return np.concatenate([[0], np.cumsum(self.widths())])


def submatrix(params: StcParams):
    """Keyed columns of the h x w submatrix, each with its top and bottom bit set."""
    h, w = params.height, params.max_width
    need = 1 | (1 << (h - 1))
    mask = (1 << h) - 1
    cols = []
    drawn = 0
    while len(cols) < w:
        # Draw a fixed-size batch from the stream; every draw is consumed in order.
        batch = max(4 * (w - len(cols)), 16)
        raw = keyed_uniforms(params.seed, (drawn + batch,))[drawn:]
        drawn += batch
        vals = (raw * 2.0**53).astype(np.int64) & mask
        cols.extend(int(v) for v in vals if v & need == need)
    return np.array(cols[:w], dtype=np.int64)


def column_ints(params: StcParams):
    """Column integer of every cover element."""
    sub = submatrix(params)
    widths = params.widths()
    return np.concatenate([sub[:wi] for wi in widths]) if params.m else np.zeros(0, dtype=np.int64)


def stc_matrix(params: StcParams):
    """Dense ``(m, n)`` parity-check matrix; meant for checks on small instances."""
    H = np.zeros((params.m, params.n), dtype=np.uint8)
    if params.m == 0:
        return H
    cols = column_ints(params)
    starts = params.block_starts()
    for i in range(params.m):
        for j in range(starts[i], starts[i + 1]):
            for t in range(params.height):
                if i + t < params.m and (cols[j] >> t) & 1:
                    H[i + t, j] = 1
    return H


@numba.njit(cache=True)
def _viterbi(parity, cost, cols, widths, message, height):
    n = parity.shape[0]
    n_states = 1 << height
    half = n_states >> 1
    inf = np.inf
    wght = np.full(n_states, inf)
    wght[0] = 0.0
    path = np.zeros((n, n_states), dtype=np.uint8)
    j = 0
    for i in range(widths.shape[0]):
        for _ in range(widths[i]):
            col = cols[j]
            # cost of stego parity 0 and 1 for this element
            if parity[j] == 0:
                c0 = 0.0
                c1 = cost[j]
            else:
                c0 = cost[j]
                c1 = 0.0
            new = np.empty(n_states)
            for s in range(n_states):
                a = wght[s] + c0
                b = wght[s ^ col] + c1
                if b < a:
                    new[s] = b
                    path[j, s] = 1
                else:
                    new[s] = a
            wght = new
            j += 1
        bit = message[i]
        shifted = np.full(n_states, inf)
        for s in range(half):
            shifted[s] = wght[2 * s + bit]
        wght = shifted

    state = 0
    best = inf
    for s in range(n_states):
        if wght[s] < best:
            best = wght[s]
            state = s
    stego = np.zeros(n, dtype=np.uint8)
    if best == inf:
        return stego, best
    j = n - 1
    for i in range(widths.shape[0] - 1, -1, -1):
        state = ((state << 1) | message[i]) & (n_states - 1)
        for _ in range(widths[i]):
            y = path[j, state]
            stego[j] = y
            if y:
                state ^= cols[j]
            j -= 1
    return stego, best


@numba.njit(cache=True)
def _syndrome(bits, cols, widths):
    out = np.zeros(widths.shape[0], dtype=np.uint8)
    state = 0
    j = 0
    for i in range(widths.shape[0]):
        for _ in range(widths[i]):
            if bits[j]:
                state ^= cols[j]
            j += 1
        out[i] = state & 1
        state >>= 1
    return out


def _as_bits(bits, name="bits"):
    arr = np.asarray(bits)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8).reshape(-1)


def stc_encode(parity, cost, message, params: StcParams):
    """Minimum-cost flips so that ``H @ (parity ^ flips) = message (mod 2)``.

    ``cost`` is the price of flipping each element; ``inf`` marks a wet
    element whose parity must stay. Returns ``(flips, total_cost)``.
    """
    parity = _as_bits(parity, "parity")
    message = _as_bits(message, "message")
    cost = np.asarray(cost, dtype=np.float64).reshape(-1)
    if len(parity) != params.n or len(cost) != params.n or len(message) != params.m:
        raise InvalidLength("cover, cost and message lengths must match the code parameters")
    if np.any(cost < 0) or np.any(np.isnan(cost)):
        raise ValueError("flip costs must be non-negative")
    if params.m == 0:
        return np.zeros(params.n, dtype=bool), 0.0
    cols = column_ints(params)
    stego, total = _viterbi(parity, cost, cols, params.widths(), message, params.height)
    if math.isinf(total):
        raise EmbeddingInfeasible("no parity pattern with the required syndrome avoids the wet elements")
    return stego != parity, float(total)


def stc_extract(parity, params: StcParams):
    """Message carried by the stego parities: ``H @ parity mod 2``."""
    parity = _as_bits(parity, "parity")
    if len(parity) != params.n:
        raise InvalidLength(f"expected {params.n} parities, got {len(parity)}")
    if params.m == 0:
        return np.zeros(0, dtype=np.uint8)
    return _syndrome(parity, column_ints(params), params.widths())


def parity_of(values):
    """Value mod 2, with negative values handled mathematically."""
    return np.mod(np.asarray(values, dtype=np.int64), 2).astype(np.uint8)


def simulate_embedding(beta_plus, beta_minus, seed):
    """Draw changes that realise the given change rates.

    Returns an int8 array of +1, -1 and 0 with the shape of the rates.
    """
    bp = np.asarray(beta_plus, dtype=np.float64)
    bm = np.asarray(beta_minus, dtype=np.float64)
    u = keyed_uniforms(int(seed), bp.shape)
    out = np.zeros(bp.shape, dtype=np.int8)
    out[u < bp] = 1
    out[(u >= bp) & (u < bp + bm)] = -1
    return out
