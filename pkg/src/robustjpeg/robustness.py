"""Which coefficients of a lattice survive recompression, and in which direction.

A coefficient at lattice position ``k`` of block ``b`` is robust toward a
change ``i`` in {-1, +1} when, after recompressing the current pseudo-stego:

* every already processed coefficient of block ``b`` keeps the value it gets
  without the change (and, under filtering, so does every coefficient of each
  fully processed neighbouring block),
* the changed coefficient comes back as ``c + i``,
* without the change the coefficient comes back as ``c``.

All members of a lattice are perturbed together, which is exact because a
block only reacts to its own coefficients (no filter) or to those of adjacent
blocks, none of which share its macro-lattice (filter).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .exceptions import ScheduleMismatch
from .lattices import MacroLatticeSchedule

# Largest magnitudes a baseline stream can carry.
AC_LIMIT = 1023
DC_LIMIT = 2047


class Label(IntEnum):
    BOTH = 0
    PLUS_ONLY = 1
    MINUS_ONLY = 2
    NON_ROBUST = 3


@dataclass
class RobustnessMap:
    """Labels for the members of one lattice, aligned with ``blocks``/``modes``.

    ``predicted`` is the value each coefficient takes after recompression
    when it is left unchanged; for robust members it equals ``values``.
    """

    lattice: int
    blocks: np.ndarray
    modes: np.ndarray
    labels: np.ndarray
    predicted: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def plus_ok(self):
        return (self.labels == Label.BOTH) | (self.labels == Label.PLUS_ONLY)

    @property
    def minus_ok(self):
        return (self.labels == Label.BOTH) | (self.labels == Label.MINUS_ONLY)

    @property
    def robust(self):
        return self.labels != Label.NON_ROBUST

    def counts(self):
        tally = np.bincount(self.labels, minlength=4)
        return {"nBoth": int(tally[Label.BOTH]), "nPlusOnly": int(tally[Label.PLUS_ONLY]),
                "nMinusOnly": int(tally[Label.MINUS_ONLY]), "nNonRobust": int(tally[Label.NON_ROBUST])}

    def robust_fraction(self):
        return float(self.robust.mean()) if len(self) else 0.0


def _check_filtering(schedule, coder):
    if getattr(coder, "filtered", False) and not isinstance(schedule, MacroLatticeSchedule):
        raise ScheduleMismatch("a filtering channel needs a macro-lattice schedule")


def labels_from_directions(plus, minus):
    labels = np.full(plus.shape, Label.NON_ROBUST, dtype=np.int8)
    labels[plus & ~minus] = Label.PLUS_ONLY
    labels[minus & ~plus] = Label.MINUS_ONLY
    labels[plus & minus] = Label.BOTH
    return labels


def classify_lattice(coeffs, schedule, lattice, coder, r0=None) -> RobustnessMap:
    """Label every member of ``lattice`` using three recompressions.

    ``coeffs`` is the current pseudo-stego, as a ``(by, bx, 64)`` array or a
    plane. ``r0`` may carry an already computed recompression of ``coeffs``,
    in which case only two calls are made.
    """
    _check_filtering(schedule, coder)
    coeffs = np.asarray(getattr(coeffs, "coeffs", coeffs))
    shape = coeffs.shape
    flat = coeffs.reshape(-1, 64)
    blocks, modes = schedule.members(lattice)
    if r0 is None:
        r0 = coder.recompress(coeffs)
    r0 = np.asarray(r0).reshape(-1, 64)

    values = flat[blocks, modes]
    predicted = r0[blocks, modes]
    keeps_value = predicted == values
    processed = schedule.processed_mask(lattice)[blocks]
    limit = np.where(modes == 0, DC_LIMIT, AC_LIMIT)

    if schedule.n_classes > 1:
        cls = lattice // 64
        nb = schedule.neighbours()[blocks]
        done = (nb >= 0) & (schedule.block_class[nb] < cls)

    ok = {}
    for step in (1, -1):
        delta = np.zeros_like(flat)
        delta[blocks, modes] = step
        ri = np.asarray(coder.recompress(coeffs, delta.reshape(shape))).reshape(-1, 64)
        moved = ri != r0
        stable = ~np.any(moved[blocks] & processed, axis=1)
        if schedule.n_classes > 1:
            touched = moved.any(axis=1)
            stable &= ~np.any(done & touched[nb], axis=1)
        survives = ri[blocks, modes] == values + step
        in_range = np.abs(values + step) <= limit
        ok[step] = stable & survives & keeps_value & in_range

    return RobustnessMap(lattice, blocks, modes, labels_from_directions(ok[1], ok[-1]),
                         predicted.astype(np.int32), values.astype(np.int32))


def initial_robust_map(cover, schedule, coder) -> list:
    """Robustness of every lattice of the unmodified cover.

    The cover does not change between lattices, so its no-change
    recompression is computed once and shared.
    """
    _check_filtering(schedule, coder)
    coeffs = np.asarray(getattr(cover, "coeffs", cover))
    r0 = coder.recompress(coeffs)
    return [classify_lattice(coeffs, schedule, k, coder, r0=r0) for k in range(schedule.n_lattices)]


def robust_fractions(maps):
    return np.array([m.robust_fraction() for m in maps])


def label_plane(maps, shape):
    """Scatter per-lattice labels into a ``(n_blocks, 64)`` array."""
    out = np.full((int(np.prod(shape[:-1])), 64), Label.NON_ROBUST, dtype=np.int8)
    for m in maps:
        out[m.blocks, m.modes] = m.labels
    return out
