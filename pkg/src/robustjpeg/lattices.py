"""Embedding order: 64 lattices per block class, with optional 3x3 macro-lattices.

A lattice is one position ``k`` of the per-block mode permutation taken over
every block of one class. Without filtering there is a single class. With
filtering, blocks are split into 9 classes by ``(row % 3, col % 3)`` so that a
filter window of at most 8x8 pixels never couples two blocks of one class; the
global lattice index is then ``class * 64 + k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jpeg.core import ZIGZAG
from .keys import StegoKey, keyed_permutations

STRATEGIES = ("lowhigh", "highlow", "random")


def zigzag_order():
    """Natural mode indices in JPEG zigzag scan order."""
    return ZIGZAG.copy()


@dataclass(frozen=True)
class ScanStrategy:
    kind: str = "lowhigh"
    seed: int | None = None

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "").replace("_", "")
        if kind not in STRATEGIES:
            raise ValueError(f"unknown scan strategy {self.kind!r}; choose from {STRATEGIES}")
        object.__setattr__(self, "kind", kind)
        if kind == "random" and self.seed is None:
            raise ValueError("the random strategy needs a seed derived from the stego key")

    @classmethod
    def from_key(cls, kind, key):
        """Strategy whose random seed is derived from the stego key."""
        kind = kind.kind if isinstance(kind, ScanStrategy) else kind
        seed = StegoKey(key).subkey("schedule") if str(kind).lower() == "random" else None
        return cls(kind, seed)


class LatticeSchedule:
    """Per-block mode permutations defining the lattice membership.

    ``order[b, k]`` is the mode of block ``b`` in lattice position ``k``;
    ``position[b, n]`` is the inverse. Blocks are numbered row-major.
    """

    n_classes = 1

    def __init__(self, order, blocks_x, blocks_y, strategy=None):
        self.order = np.asarray(order, dtype=np.int64)
        self.blocks_x = int(blocks_x)
        self.blocks_y = int(blocks_y)
        self.strategy = strategy
        if self.order.shape != (self.n_blocks, 64):
            raise ValueError("order must have one permutation of 64 modes per block")
        self.position = np.empty_like(self.order)
        rows = np.arange(self.n_blocks)[:, None]
        self.position[rows, self.order] = np.arange(64)
        self.block_class = self._classes()
        self._lattice_index = self.block_class[:, None] * 64 + self.position
        self._members = {}

    def _classes(self):
        return np.zeros(self.n_blocks, dtype=np.int64)

    @property
    def n_blocks(self):
        return self.blocks_x * self.blocks_y

    @property
    def n_lattices(self):
        return self.n_classes * 64

    def split(self, lattice):
        if not 0 <= lattice < self.n_lattices:
            raise IndexError(f"lattice {lattice} out of range")
        return divmod(lattice, 64)

    def members(self, lattice):
        """``(blocks, modes)`` of one lattice, blocks in increasing order."""
        cached = self._members.get(lattice)
        if cached is None:
            cls, k = self.split(lattice)
            blocks = np.flatnonzero(self.block_class == cls)
            cached = (blocks, self.order[blocks, k])
            self._members[lattice] = cached
        return cached

    def lattice_size(self, lattice):
        return len(self.members(lattice)[0])

    def lattice_sizes(self):
        counts = np.bincount(self.block_class, minlength=self.n_classes)
        return np.repeat(counts, 64)

    def lattice_index(self):
        """``(n_blocks, 64)`` array giving the lattice of every (block, mode)."""
        return self._lattice_index

    def processed_mask(self, lattice):
        """Boolean ``(n_blocks, 64)`` mask of positions embedded before ``lattice``."""
        return self._lattice_index < lattice

    def __eq__(self, other):
        return (type(self) is type(other)
                and (self.blocks_x, self.blocks_y) == (other.blocks_x, other.blocks_y)
                and np.array_equal(self.order, other.order))

    def __repr__(self):
        return (f"{type(self).__name__}({self.blocks_x}x{self.blocks_y} blocks, "
                f"{self.n_lattices} lattices, strategy={self.strategy})")


class MacroLatticeSchedule(LatticeSchedule):
    """Schedule over 9 block classes ``(row % 3) * 3 + col % 3``, class-major."""

    n_classes = 9

    def _classes(self):
        rows, cols = np.divmod(np.arange(self.n_blocks), self.blocks_x)
        return (rows % 3) * 3 + cols % 3

    def neighbours(self):
        """``(n_blocks, 8)`` indices of the 8-neighbourhood, ``-1`` off the grid."""
        cached = getattr(self, "_neighbours", None)
        if cached is not None:
            return cached
        rows, cols = np.divmod(np.arange(self.n_blocks), self.blocks_x)
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                r, c = rows + dr, cols + dc
                inside = (r >= 0) & (r < self.blocks_y) & (c >= 0) & (c < self.blocks_x)
                out.append(np.where(inside, r * self.blocks_x + c, -1))
        self._neighbours = np.stack(out, axis=1)
        return self._neighbours


def _orders(strategy: ScanStrategy, n_blocks):
    if strategy.kind == "lowhigh":
        return np.tile(ZIGZAG, (n_blocks, 1))
    if strategy.kind == "highlow":
        return np.tile(ZIGZAG[::-1], (n_blocks, 1))
    return keyed_permutations(strategy.seed, n_blocks, 64)


def _as_strategy(strategy, key=None):
    if isinstance(strategy, ScanStrategy):
        return strategy
    if key is not None:
        return ScanStrategy.from_key(strategy, key)
    return ScanStrategy(strategy)


def build_schedule(strategy, blocks_x, blocks_y, key=None) -> LatticeSchedule:
    if blocks_x <= 0 or blocks_y <= 0:
        raise ValueError("block counts must be positive")
    strategy = _as_strategy(strategy, key)
    return LatticeSchedule(_orders(strategy, blocks_x * blocks_y), blocks_x, blocks_y, strategy)


def build_macro_schedule(strategy, blocks_x, blocks_y, key=None) -> MacroLatticeSchedule:
    if blocks_x <= 0 or blocks_y <= 0:
        raise ValueError("block counts must be positive")
    strategy = _as_strategy(strategy, key)
    return MacroLatticeSchedule(_orders(strategy, blocks_x * blocks_y), blocks_x, blocks_y, strategy)
