"""Reference pixel <-> DCT pipeline and the recompression operator.

Coefficient planes are stored as ``(blocks_y, blocks_x, 64)`` integer arrays.
The last axis is the DCT mode in natural (row-major) order, so mode ``n``
sits at row ``n // 8`` and column ``n % 8`` of the 8x8 block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numba
import numpy as np
from scipy import ndimage

from ..exceptions import InvalidModification, InvalidQuality

# Annex K.1 luminance table, natural order.
ANNEX_K_LUMINANCE = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.int32)


def _zigzag():
    order = sorted(((r, c) for r in range(8) for c in range(8)),
                   key=lambda rc: (rc[0] + rc[1],
                                   rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]))
    return np.array([r * 8 + c for r, c in order], dtype=np.int64)


#: ZIGZAG[k] is the natural mode index of the k-th coefficient in scan order.
ZIGZAG = _zigzag()
#: Inverse permutation: UNZIGZAG[n] is the scan position of natural mode n.
UNZIGZAG = np.argsort(ZIGZAG)


def _dct_matrix():
    u = np.arange(8)[:, None]
    x = np.arange(8)[None, :]
    mat = np.cos((2 * x + 1) * u * np.pi / 16) * 0.5
    mat[0] = np.sqrt(1 / 8)
    return mat


DCT_MATRIX = _dct_matrix()
# The 2-D transform of a row-major flattened block is one 64x64 product.
_KRON = np.kron(DCT_MATRIX, DCT_MATRIX)
_KRON_T = np.ascontiguousarray(_KRON.T)

#: Values are rounded to this many decimals before integer rounding, so that
#: exact ties (common on flat blocks) follow the tie rule, not float noise.
TIE_DECIMALS = 7


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    x = np.round(x, TIE_DECIMALS)
    return np.trunc(x + np.copysign(0.5, x))


@dataclass(frozen=True, eq=False)
class QuantTable:
    """64 quantization steps, held in natural mode order.

    The zigzag ordering used by JPEG files and by the table file format is
    available through :meth:`zigzag` and :meth:`from_zigzag`.
    """

    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int32).reshape(64)
        if np.any(steps < 1):
            raise ValueError("quantization steps must be >= 1")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    def __eq__(self, other):
        return isinstance(other, QuantTable) and np.array_equal(self.steps, other.steps)

    def __hash__(self):
        return hash(self.steps.tobytes())

    def __repr__(self):
        return f"QuantTable(dc={self.steps[0]}, max={self.steps.max()})"

    @classmethod
    def from_qf(cls, qf, base=ANNEX_K_LUMINANCE):
        return quant_table_from_qf(qf, base)

    @classmethod
    def from_zigzag(cls, values):
        values = np.asarray(values, dtype=np.int32).reshape(64)
        steps = np.empty(64, dtype=np.int32)
        steps[ZIGZAG] = values
        return cls(steps)

    def zigzag(self):
        return self.steps[ZIGZAG].copy()

    @classmethod
    def load(cls, path):
        """Read 64 whitespace-separated integers in zigzag order."""
        values = Path(path).read_text().split()
        if len(values) != 64:
            raise ValueError(f"{path}: expected 64 integers, found {len(values)}")
        return cls.from_zigzag([int(v) for v in values])

    def save(self, path):
        rows = self.zigzag().reshape(8, 8)
        Path(path).write_text("\n".join(" ".join(str(v) for v in r) for r in rows) + "\n")

    def as_matrix(self):
        return self.steps.reshape(8, 8)


def quant_table_from_qf(qf, base=ANNEX_K_LUMINANCE) -> QuantTable:
    """IJG quality scaling of ``base`` (natural order)."""
    if isinstance(qf, bool) or not isinstance(qf, (int, np.integer)) or not 1 <= qf <= 100:
        raise InvalidQuality(f"quality factor must be an integer in 1..100, got {qf!r}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    base = np.asarray(base, dtype=np.int64).reshape(64)
    steps = np.clip((base * scale + 50) // 100, 1, 255)
    return QuantTable(steps)


def _dct_flat(flat):
    return flat @ _KRON_T


def _idct_flat(flat):
    return flat @ _KRON


@numba.njit(cache=True)
def _snap(x):
    scaled = x * 1e7
    return np.rint(scaled) / 1e7


@numba.njit(cache=True)
def _pixel_kernel(values):
    out = np.empty(values.shape)
    flat_in = values.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        # negative samples clip to 0 whichever way ties go, so floor(x + .5) is exact
        v = np.floor(_snap(flat_in[i]) + 0.5)
        flat_out[i] = min(max(v, 0.0), 255.0)
    return out


@numba.njit(cache=True)
def _quantize_kernel(raw, steps):
    n, width = raw.shape
    out = np.empty((n, width), dtype=np.int32)
    for i in range(n):
        for j in range(width):
            v = _snap(raw[i, j] / steps[j])
            out[i, j] = np.int32(np.trunc(v + 0.5) if v >= 0 else np.trunc(v - 0.5))
    return out


def _to_pixels(values):
    return _pixel_kernel(np.ascontiguousarray(values, dtype=np.float64))


def forward_blocks(pixels):
    """Level-shifted orthonormal 2-D DCT-II over the trailing 8x8 axes."""
    pixels = np.asarray(pixels, dtype=np.float64)
    return _dct_flat(pixels.reshape(-1, 64) - 128.0).reshape(pixels.shape)


def inverse_blocks_float(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return (_idct_flat(coeffs.reshape(-1, 64)) + 128.0).reshape(coeffs.shape)


def inverse_blocks(coeffs):
    """Inverse DCT, +128, round half away from zero and clip to [0, 255]."""
    return _to_pixels(inverse_blocks_float(coeffs)).astype(np.uint8)


def forward_block(pixels):
    """8x8 pixel block -> 64 real DCT values in natural mode order."""
    pixels = np.asarray(pixels)
    if pixels.shape != (8, 8):
        raise ValueError("forward_block expects an 8x8 block")
    return forward_blocks(pixels).reshape(64)


def inverse_block(coeffs):
    """64 real DCT values -> 8x8 block of integers in [0, 255]."""
    return inverse_blocks(np.asarray(coeffs, dtype=np.float64).reshape(8, 8))


def quantize(raw, table):
    steps = table.steps if isinstance(table, QuantTable) else np.asarray(table)
    return round_half_away(np.asarray(raw, dtype=np.float64) / steps).astype(np.int32)


def dequantize(coeffs, table):
    steps = table.steps if isinstance(table, QuantTable) else np.asarray(table)
    return np.asarray(coeffs, dtype=np.float64) * steps


class Modification(NamedTuple):
    block: int
    mode: int
    delta: int


@dataclass(eq=False)
class CoefficientPlane:
    """Quantized DCT coefficients of a grayscale JPEG image."""

    coeffs: np.ndarray
    table: QuantTable
    width: int | None = None
    height: int | None = None
    quality: int | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs)
        if coeffs.ndim == 4 and coeffs.shape[2:] == (8, 8):
            coeffs = coeffs.reshape(coeffs.shape[0], coeffs.shape[1], 64)
        if coeffs.ndim != 3 or coeffs.shape[2] != 64:
            raise ValueError(f"coefficients must have shape (by, bx, 64), got {coeffs.shape}")
        self.coeffs = coeffs.astype(np.int32, copy=False)
        if self.width is None:
            self.width = 8 * coeffs.shape[1]
        if self.height is None:
            self.height = 8 * coeffs.shape[0]

    @property
    def blocks_y(self):
        return self.coeffs.shape[0]

    @property
    def blocks_x(self):
        return self.coeffs.shape[1]

    @property
    def n_blocks(self):
        return self.blocks_x * self.blocks_y

    @property
    def flat(self):
        """``(n_blocks, 64)`` view, blocks in row-major order."""
        return self.coeffs.reshape(-1, 64)

    def with_coeffs(self, coeffs):
        return CoefficientPlane(np.asarray(coeffs).reshape(self.coeffs.shape).copy(),
                                self.table, self.width, self.height, self.quality)

    def copy(self):
        return self.with_coeffs(self.coeffs)

    def __eq__(self, other):
        return (isinstance(other, CoefficientPlane)
                and self.table == other.table
                and (self.width, self.height) == (other.width, other.height)
                and np.array_equal(self.coeffs, other.coeffs))

    def nonzero_ac(self):
        return int(np.count_nonzero(self.coeffs[..., 1:]))


def _blockify(pixels):
    h, w = pixels.shape
    return pixels.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblockify(blocks):
    by, bx = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(by * 8, bx * 8)


def pad_to_blocks(pixels):
    """Edge-replicate ``pixels`` up to multiples of 8 in both directions."""
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    return np.pad(pixels, ((0, -h % 8), (0, -w % 8)), mode="edge")


def compress(pixels, table, quality=None) -> CoefficientPlane:
    """Encode a 2-D uint8 raster into a coefficient plane."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("only single-channel (grayscale) rasters are supported")
    if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
        raise ValueError("pixel values must lie in [0, 255]")
    h, w = pixels.shape
    blocks = _blockify(pad_to_blocks(pixels))
    coeffs = quantize(forward_blocks(blocks).reshape(*blocks.shape[:2], 64), table)
    return CoefficientPlane(coeffs, table, w, h, quality)


def decompress(plane, crop=False):
    """Decode to pixels. The padded full-block raster is returned unless ``crop``."""
    raw = dequantize(plane.coeffs, plane.table).reshape(*plane.coeffs.shape[:2], 8, 8)
    pixels = _unblockify(inverse_blocks(raw))
    if crop:
        pixels = pixels[:plane.height, :plane.width]
    return pixels


@dataclass(frozen=True, eq=False)
class FilterSpec:
    """Spatial filter applied between decompression and recompression."""

    kernel: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
            raise ValueError("filter kernel must be an odd-sized square matrix")
        # The window must stay within 8x8 so a change only reaches adjacent blocks.
        if kernel.shape[0] > 7:
            raise ValueError("filter kernel must fit within an 8x8 window")
        object.__setattr__(self, "kernel", kernel)

    def apply(self, pixels):
        out = ndimage.correlate(np.asarray(pixels, dtype=np.float64), self.kernel, mode="nearest")
        return np.clip(np.floor(np.round(out, TIE_DECIMALS) + 0.5), 0, 255).astype(np.uint8)


GAUSSIAN_3X3 = FilterSpec(np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0, "gaussian")
SHARPEN_3X3 = FilterSpec(np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]]), "sharpen")
FILTERS = {"gaussian": GAUSSIAN_3X3, "sharpen": SHARPEN_3X3}


def get_filter(name):
    if name is None or isinstance(name, FilterSpec):
        return name
    try:
        return FILTERS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; choose from {sorted(FILTERS)}") from None


def recompress_coeffs(coeffs, steps, delta=None, image_filter=None):
    """Decompress ``coeffs + delta``, optionally filter, and compress again.

    Works on raw ``(by, bx, 64)`` arrays; this is the hot path used by the
    robustness analysis.
    """
    coeffs = np.asarray(coeffs)
    by, bx = coeffs.shape[:2]
    values = coeffs if delta is None else coeffs + delta
    raw = values.reshape(-1, 64) * np.asarray(steps, dtype=np.float64)
    pixels = _to_pixels(_idct_flat(raw) + 128.0)
    if image_filter is not None:
        pixels = image_filter.apply(_unblockify(pixels.reshape(by, bx, 8, 8)))
        pixels = _blockify(pixels).reshape(-1, 64).astype(np.float64)
    fresh = _dct_flat(pixels - 128.0)
    return _quantize_kernel(fresh, np.asarray(steps, dtype=np.float64).reshape(64)).reshape(by, bx, 64)


def modifications_to_delta(shape, mods: Iterable[Modification]):
    by, bx, _ = shape
    delta = np.zeros((by * bx, 64), dtype=np.int32)
    seen = set()
    for mod in mods:
        block, mode, d = (int(v) for v in mod)
        if not 0 <= block < by * bx or not 0 <= mode < 64:
            raise InvalidModification(f"modification {mod} lies outside the plane")
        if d not in (-1, 0, 1):
            raise InvalidModification(f"modification delta must be -1, 0 or +1, got {d}")
        if (block, mode) in seen:
            raise InvalidModification(f"duplicate modification at block {block}, mode {mode}")
        seen.add((block, mode))
        delta[block, mode] = d
    return delta.reshape(shape)


def recompress(plane, mods=(), image_filter=None) -> CoefficientPlane:
    """Recompression operator: the coefficients obtained after the channel."""
    delta = modifications_to_delta(plane.coeffs.shape, mods)
    out = recompress_coeffs(plane.coeffs, plane.table.steps, delta, get_filter(image_filter))
    return plane.with_coeffs(out)


@dataclass(eq=False)
class InternalCoder:
    """The reference coder, with a call counter.

    ``recompress`` takes an optional ``delta`` array so a whole lattice can be
    perturbed in one call.
    """

    table: QuantTable
    image_filter: FilterSpec | None = None
    calls: int = field(default=0)

    @property
    def filtered(self):
        return self.image_filter is not None

    def recompress(self, coeffs, delta=None):
        self.calls += 1
        return recompress_coeffs(coeffs, self.table.steps, delta, self.image_filter)
