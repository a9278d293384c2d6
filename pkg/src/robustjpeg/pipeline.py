"""Lattice-by-lattice embedding and extraction over a recompression channel.

Embedding walks the lattices in schedule order. For each lattice it labels
the members of the current pseudo-stego, codes its share of the bits with an
STC over the parities the receiver will see after the channel, and applies
the flips in a direction that is known to survive. Non-robust members are
wet and keep their cover value.

Bookkeeping travels in-band. A few bootstrap lattices each carry a short
piece of a header ahead of their share of the message. They are picked by
one of a handful of fixed placements that depend on the image dimensions
alone; the embedder chooses the placement with the most robust room and the
receiver finds it by the header checksum. The header holds the message
length and, unless the equal split is used, one 6-bit weight per lattice
position telling the receiver how the message was spread over the lattices.
"""
from __future__ import annotations

import binascii
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .costs import CostMap, base_costs, robust_cost_update, solve_change_rates, spread_payload
from .exceptions import (
    ChannelMismatch,
    EmbeddingInfeasible,
    ExternalCoderFailure,
    InvalidLength,
    MalformedJpeg,
    PayloadExceedsCapacity,
    UnsupportedJpeg,
)
from .jpeg.core import CoefficientPlane, FilterSpec, InternalCoder, QuantTable, get_filter
from .jpeg.stream import parse, serialize
from .keys import StegoKey, keyed_permutation, keyed_uniforms
from .lattices import ScanStrategy, build_macro_schedule, build_schedule
from .robustness import Label, classify_lattice
from .stc import StcParams, parity_of, simulate_embedding, stc_encode, stc_extract
from .validation import check_bits

# The header is spread thinly over this many bootstrap lattices. Under a
# filter only the first positions of each block class tend to stay robust,
# so there it goes to positions 0 and 1 of every class instead.
HEADER_LATTICES = 32
HEADER_POSITIONS_FILTERED = 2
# A bootstrap lattice gives the header a prefix of its keyed member order:
# a quarter of the lattice, or four members per header bit if that is more.
HEADER_SHARE = 4
HEADER_SPAN = 4
LENGTH_BITS = 24
CRC_BITS = 16
CODE_BITS = 6
CODE_MAX = (1 << CODE_BITS) - 1
# Fraction of the live members of a lattice the binary code is asked to fill;
# kept below the feasibility edge because earlier flips shrink the live set.
LOAD_CAP = 0.5
TMPDIR_ENV = "ROBUSTJPEG_TMPDIR"


class ExternalCoder:
    """Channel realised by a shell command that reads ``{in}`` and writes ``{out}``."""

    def __init__(self, command, table: QuantTable, width=None, height=None, filtered=False, check_table=True):
        if "{in}" not in command or "{out}" not in command:
            raise ValueError("the coder command needs {in} and {out} placeholders")
        self.command = command
        self.table = table
        self.width = width
        self.height = height
        self._filtered = bool(filtered)
        self.check_table = check_table
        self.calls = 0

    @property
    def filtered(self):
        return self._filtered

    def run(self, plane: CoefficientPlane) -> CoefficientPlane:
        self.calls += 1
        with tempfile.TemporaryDirectory(prefix="robustjpeg-", dir=os.environ.get(TMPDIR_ENV)) as tmp:
            src, dst = Path(tmp) / "in.jpg", Path(tmp) / "out.jpg"
            src.write_bytes(serialize(plane))
            args = [a.replace("{in}", str(src)).replace("{out}", str(dst)) for a in shlex.split(self.command)]
            try:
                proc = subprocess.run(args, capture_output=True, timeout=120)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise ExternalCoderFailure(f"could not run {args[0]!r}: {exc}") from exc
            if proc.returncode != 0:
                raise ExternalCoderFailure(f"coder exited with status {proc.returncode}: "
                                           f"{proc.stderr.decode(errors='replace').strip()}")
            try:
                out = parse(dst.read_bytes()).plane
            except (OSError, MalformedJpeg, UnsupportedJpeg) as exc:
                raise ExternalCoderFailure(f"coder output is not a readable baseline JPEG: {exc}") from exc
        if self.check_table and out.table != plane.table:
            raise ExternalCoderFailure("coder changed the quantization table")
        if out.coeffs.shape != plane.coeffs.shape:
            raise ExternalCoderFailure("coder changed the image dimensions")
        return out

    def recompress(self, coeffs, delta=None):
        coeffs = np.asarray(coeffs)
        values = coeffs if delta is None else coeffs + delta
        by, bx = values.shape[:2]
        plane = CoefficientPlane(values, self.table, self.width or 8 * bx, self.height or 8 * by)
        return self.run(plane).coeffs


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """What happens to the stego image after upload.

    ``coder`` is ``"internal"`` (the reference recompression with the cover's
    own table) or ``"external"`` with a ``command`` template.
    """

    coder: str = "internal"
    image_filter: FilterSpec | None = None
    command: str | None = None

    def __post_init__(self):
        if self.coder not in ("internal", "external"):
            raise ValueError("coder must be 'internal' or 'external'")
        if self.coder == "external" and not self.command:
            raise ValueError("an external channel needs a command template")
        object.__setattr__(self, "image_filter", get_filter(self.image_filter))

    @property
    def filtered(self):
        return self.image_filter is not None

    def make_coder(self, plane: CoefficientPlane):
        if self.coder == "internal":
            return InternalCoder(plane.table, self.image_filter)
        return ExternalCoder(self.command, plane.table, plane.width, plane.height, filtered=self.filtered)


def simulate_channel(stego: CoefficientPlane, channel: ChannelSpec | None = None, coder=None) -> CoefficientPlane:
    """The plane the receiver gets after the channel."""
    channel = channel or ChannelSpec()
    coder = coder or channel.make_coder(stego)
    if isinstance(coder, ExternalCoder):
        return coder.run(stego)
    return stego.with_coeffs(coder.recompress(stego.coeffs))


def make_schedule(plane, key, strategy="lowhigh", filtered=False):
    strategy = ScanStrategy.from_key(strategy, key)
    build = build_macro_schedule if filtered else build_schedule
    return build(strategy, plane.blocks_x, plane.blocks_y)


# --- in-band layout -------------------------------------------------------

def header_size(equal_spread):
    return LENGTH_BITS + CRC_BITS + (0 if equal_spread else 64 * CODE_BITS)


def placement_order(placement):
    """Lattice positions in the order a header placement visits them."""
    pos = np.arange(64)
    even_odd = np.concatenate([pos[::2], pos[1::2]])
    orders = (pos, pos[::-1], even_odd, np.roll(even_odd, -32))
    return orders[placement]


HEADER_PLACEMENTS = 4
# Checksum seeds keep the fixed placements and anchors from passing for each other.
ANCHOR_SEED = 0x100
LOCATOR_SEED = 0x200
LOCATOR_BITS = 64 + CRC_BITS
# Numbers of header positions an anchored plan may name.
ANCHOR_POSITIONS = (32, 16, 8, 4, 2)


def bootstrap_count(schedule):
    n_classes = schedule.n_classes
    return HEADER_LATTICES if n_classes == 1 else HEADER_POSITIONS_FILTERED * n_classes


def _spread(schedule, lattices, n_bits):
    """Cut ``n_bits`` into nearly equal pieces over ``lattices``, taken in that order."""
    sizes = schedule.lattice_sizes()
    per = max(1, -(-n_bits // max(len(lattices), 1)))
    out = np.zeros(schedule.n_lattices, dtype=np.int64)
    left = n_bits
    for lat in lattices:
        if left == 0:
            break
        out[lat] = min(left, per, sizes[lat])
        left -= out[lat]
    if left:
        raise PayloadExceedsCapacity(n_bits, n_bits - left, "the image is too small to hold the header")
    return out


def header_layout(schedule, n_bits, placement=0, n_lattices=None):
    """Header bits per lattice for one of the fixed placements.

    The header is cut into ``n_lattices`` nearly equal pieces so that no
    single lattice has to carry much of it. Bootstrap lattices are taken
    position-major in the order of ``placement`` (that position in every
    block class, then the next one, ...), so under filtering the header
    does not reach far into one class.
    """
    n_lattices = n_lattices or bootstrap_count(schedule)
    lattices = np.arange(schedule.n_lattices)
    rank = np.argsort(placement_order(placement))[lattices % 64]
    return _spread(schedule, lattices[np.lexsort((lattices // 64, rank))][:n_lattices], n_bits)


def anchor_layout(schedule, anchor, positions, n_bits):
    """Locator bits at the ``anchor`` position and header bits over ``positions``.

    Returns two arrays of bits per lattice. The locator names the header
    positions, so the header can avoid lattices that have no robust members.
    """
    lattices = np.arange(schedule.n_lattices)
    locator = _spread(schedule, lattices[lattices % 64 == anchor], LOCATOR_BITS)
    chosen = lattices[np.isin(lattices % 64, positions)]
    return locator, _spread(schedule, chosen, n_bits)


def header_segments(schedule, header):
    """Members reserved for the header in every lattice (0 outside the bootstrap ones)."""
    sizes = schedule.lattice_sizes().astype(np.int64)
    seg = np.minimum(np.maximum(sizes // HEADER_SHARE, HEADER_SPAN * header), sizes)
    return np.where(header > 0, seg, 0)


def message_room(schedule, header):
    return schedule.lattice_sizes().astype(np.int64) - header_segments(schedule, header)


def message_layout(schedule, header, n_bits, codes=None):
    """Message bits per lattice.

    Shares follow ``codes[lattice % 64]`` times the members left after the
    header segment, and are rounded through cumulative floors so they add up
    to ``n_bits`` exactly.
    """
    room = message_room(schedule, header)
    weights = room.copy()
    if codes is not None:
        weights *= np.asarray(codes, dtype=np.int64)[np.arange(schedule.n_lattices) % 64]
    total = int(weights.sum())
    if n_bits and total == 0:
        raise InvalidLength("no lattice is available for the message")
    cum = (n_bits * np.cumsum(weights)) // max(total, 1)
    out = np.diff(np.concatenate([[0], cum]))
    if np.any(out > room):
        raise InvalidLength("message does not fit the lattice sizes")
    return out


def _to_bits(value, width):
    return [(value >> (width - 1 - t)) & 1 for t in range(width)]


def _checksum(bits, placement):
    # a nonzero start keeps an all-zero body from having an all-zero checksum
    return binascii.crc_hqx(np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes(), 0xFFFF ^ placement)


def _whiten(bits, key, seed):
    """XOR with a keyed stream, so reads from flat regions do not look like valid headers."""
    mask = (keyed_uniforms(key.subkey("header-mask", seed), len(bits)) < 0.5).astype(np.uint8)
    return np.asarray(bits, dtype=np.uint8) ^ mask


def encode_header(n_bits, codes=None, placement=0):
    """Length, optional per-position weights, and a CRC-16 seeded with the placement."""
    if not 0 <= n_bits < (1 << LENGTH_BITS):
        raise InvalidLength(f"message length must be below {1 << LENGTH_BITS} bits")
    bits = _to_bits(n_bits, LENGTH_BITS)
    if codes is not None:
        bits += [b for c in codes for b in _to_bits(int(c), CODE_BITS)]
    bits += _to_bits(_checksum(bits, placement), CRC_BITS)
    return np.array(bits, dtype=np.uint8)


def decode_header(bits, equal_spread, placement=0):
    """Inverse of :func:`encode_header`; a failed checksum raises InvalidLength."""
    bits = np.asarray(bits, dtype=np.int64)
    body, crc = bits[:-CRC_BITS], bits[-CRC_BITS:]
    if int(crc @ (1 << np.arange(CRC_BITS - 1, -1, -1))) != _checksum(body, placement):
        raise InvalidLength("header checksum does not match; wrong key or settings?")
    length = int(body[:LENGTH_BITS] @ (1 << np.arange(LENGTH_BITS - 1, -1, -1)))
    if equal_spread:
        return length, None
    weights = 1 << np.arange(CODE_BITS - 1, -1, -1)
    codes = body[LENGTH_BITS:].reshape(64, CODE_BITS) @ weights
    return length, codes


def encode_locator(positions, anchor):
    mask = np.zeros(64, dtype=np.uint8)
    mask[np.asarray(positions, dtype=np.int64)] = 1
    return np.concatenate([mask, _to_bits(_checksum(mask, LOCATOR_SEED + anchor), CRC_BITS)]).astype(np.uint8)


def decode_locator(bits, anchor):
    bits = np.asarray(bits, dtype=np.int64)
    mask, crc = bits[:64], bits[64:]
    if int(crc @ (1 << np.arange(CRC_BITS - 1, -1, -1))) != _checksum(mask, LOCATOR_SEED + anchor):
        raise InvalidLength("locator checksum does not match")
    positions = np.flatnonzero(mask)
    if len(positions) == 0 or anchor in positions:
        raise InvalidLength("locator names no usable header positions")
    return positions


@dataclass
class HeaderPlan:
    """Where the header (and, for anchored plans, the locator) goes."""

    seed: int
    header: np.ndarray
    locator: np.ndarray | None = None
    positions: np.ndarray | None = None
    anchor: int | None = None

    @property
    def counts(self):
        return self.header if self.locator is None else self.header + self.locator

    def pieces(self, header_bits, key):
        """Bits each lattice carries in its header segment, whitened with the key."""
        pieces = _slices(_whiten(header_bits, key, self.seed), self.header)
        if self.locator is not None:
            locator = _whiten(encode_locator(self.positions, self.anchor), key, LOCATOR_SEED + self.anchor)
            for lat, piece in enumerate(_slices(locator, self.locator)):
                if len(piece):
                    pieces[lat] = piece
        return pieces


def _header_plans(schedule, n_bits, position_ranking=None):
    """Candidate header plans in the order the receiver tries them."""
    for placement in range(HEADER_PLACEMENTS):
        try:
            yield HeaderPlan(placement, header_layout(schedule, n_bits, placement))
        except PayloadExceedsCapacity:
            continue
    if position_ranking is None:
        return
    for anchor in range(64):
        ranked = [p for p in position_ranking if p != anchor]
        for n in ANCHOR_POSITIONS:
            positions = np.sort(ranked[:n])
            try:
                locator, header = anchor_layout(schedule, anchor, positions, n_bits)
            except PayloadExceedsCapacity:
                continue
            yield HeaderPlan(ANCHOR_SEED + anchor, header, locator, positions, anchor)


def plan_codes(schedule, alpha, live, header, n_bits, cap=LOAD_CAP):
    """Quantized per-position weights for the message split.

    The desired density of a lattice position is its share of the solved
    payload. One weight serves every block class at that position, so the
    density is capped at ``cap`` times the smallest live fraction among the
    position's lattices; whatever does not fit spills proportionally onto
    the other positions.
    """
    pos = np.arange(schedule.n_lattices) % 64
    sizes = schedule.lattice_sizes()
    room = message_room(schedule, header)
    n_k = np.bincount(pos, room, minlength=64)
    a_k = np.bincount(pos, alpha, minlength=64)
    frac = np.where(room > 0, live / np.maximum(sizes, 1), np.inf)
    worst = np.full(64, np.inf)
    np.minimum.at(worst, pos, frac)
    c_k = cap * np.where(np.isfinite(worst), worst, 0) * n_k
    if c_k.sum() < n_bits:
        raise PayloadExceedsCapacity(n_bits, c_k.sum(),
                                     f"{n_bits} message bits exceed the {c_k.sum():.0f} bits the "
                                     f"robust set can carry; use a different image or a smaller message")
    a_k = np.where(c_k > 0, a_k, 0)
    if a_k.sum() <= 0:
        a_k = c_k.copy()
    lo, hi = 0.0, 1.0
    while np.minimum(hi * a_k, c_k).sum() < n_bits:
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.minimum(mid * a_k, c_k).sum() < n_bits:
            lo = mid
        else:
            hi = mid
    load = np.minimum(hi * a_k, c_k)
    density = np.divide(load, n_k, out=np.zeros(64), where=n_k > 0)
    if density.max() <= 0:
        return np.zeros(64, dtype=np.int64)
    return np.round(CODE_MAX * density / density.max()).astype(np.int64)


# --- per-lattice coding ---------------------------------------------------

def _element_order(key, lattice, size):
    return keyed_permutation(key.subkey("perm", lattice), size)


def _stc_params(key, lattice, n, m, height, label="stc"):
    return StcParams(n, m, key.subkey(label, lattice), height)


def flip_directions(plus, minus, values):
    """Cheaper live direction per member; ties move toward zero, and up from zero."""
    toward_zero = np.where(values > 0, -1, 1)
    return np.where(plus < minus, 1, np.where(minus < plus, -1, toward_zero)).astype(np.int32)


@dataclass
class LatticeRecord:
    lattice: int
    nBoth: int
    nPlusOnly: int
    nMinusOnly: int
    nNonRobust: int
    headerBits: int = 0
    messageBits: int = 0
    flips: int = 0
    cost: float = 0.0


@dataclass
class EmbedReport:
    width: int
    height: int
    quality: int | None
    strategy: str
    filter: str | None
    mode: str
    equal_spread: bool
    message_bits: int
    header_bits: int
    capacity_bits: float | None
    capacity_bpc: float | None
    initial_robust_fraction: list = field(default_factory=list)
    lattices: list = field(default_factory=list)
    total_flips: int = 0
    compressor_calls: int = 0
    success: bool = False
    seconds: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class EmbedContext:
    """Everything about a cover that does not depend on the message."""

    cover: CoefficientPlane
    key: StegoKey
    schedule: object
    coder: object
    initial_maps: list | None
    costs: CostMap
    r0: np.ndarray | None

    @property
    def capacity_bits(self):
        if self.initial_maps is None:
            return None
        from .costs import map_capacity
        return float(sum(map_capacity(m) for m in self.initial_maps))


def prepare(cover, key, strategy="lowhigh", channel=None, *, equal_spread=False, cost_model="quantstep",
            coder=None) -> EmbedContext:
    """Schedule, channel coder, costs and (unless ``equal_spread``) the initial robust maps."""
    key = StegoKey(key)
    channel = channel or ChannelSpec()
    coder = coder or channel.make_coder(cover)
    schedule = make_schedule(cover, key, strategy, channel.filtered)
    costs = base_costs(cover, cost_model)
    maps, r0 = None, None
    if not equal_spread:
        coeffs = cover.coeffs
        r0 = coder.recompress(coeffs)
        maps = [classify_lattice(coeffs, schedule, lat, coder, r0=r0) for lat in range(schedule.n_lattices)]
    return EmbedContext(cover, key, schedule, coder, maps, costs, r0)


def _live_counts(maps):
    return np.array([int(np.count_nonzero(m.labels != Label.NON_ROBUST)) for m in maps], dtype=np.float64)


def choose_header_plan(ctx, n_header):
    """Header plan whose segments leave the most live members per header bit.

    Without initial maps nothing is known about robustness and the first
    fixed placement is used.
    """
    schedule = ctx.schedule
    if ctx.initial_maps is None:
        return next(_header_plans(schedule, n_header))
    live_prefix = []
    for lat, m in enumerate(ctx.initial_maps):
        order = _element_order(ctx.key, lat, len(m))
        live_prefix.append(np.concatenate([[0], np.cumsum(m.labels[order] != Label.NON_ROBUST)]))
    pos = np.arange(schedule.n_lattices) % 64
    worst = np.full(64, np.inf)
    np.minimum.at(worst, pos, _live_counts(ctx.initial_maps) / np.maximum(schedule.lattice_sizes(), 1))
    ranking = np.argsort(-worst, kind="stable")
    best, best_score = None, -1.0
    for plan in _header_plans(schedule, n_header, ranking):
        counts = plan.counts
        seg = header_segments(schedule, counts)
        score = min(live_prefix[lat][seg[lat]] / counts[lat] for lat in np.flatnonzero(counts))
        if score > best_score:
            best, best_score = plan, score
    return best


def _layout_for_embedding(ctx, n_bits, equal_spread):
    schedule = ctx.schedule
    plan = choose_header_plan(ctx, header_size(equal_spread))
    counts = plan.counts
    if equal_spread:
        return plan, message_layout(schedule, counts, n_bits), None
    spread = spread_payload(ctx.cover, schedule, ctx.initial_maps, n_bits + counts.sum(), costs=ctx.costs)
    codes = plan_codes(schedule, spread.alpha, _live_counts(ctx.initial_maps), counts, n_bits)
    return plan, message_layout(schedule, counts, n_bits, codes), codes


def embed(cover, message, key, strategy="lowhigh", channel=None, *, equal_spread=False,
          cost_model="quantstep", height=10, simulate=False, seed=0, verify=True, context=None):
    """Hide ``message`` (bytes or bits) in ``cover``.

    Returns ``(stego, report)``. With ``simulate`` the STC is replaced by
    random changes drawn at the optimal change rates; nothing can be
    extracted from such a stego, it only has the right change statistics.
    """
    start = time.perf_counter()
    bits = check_bits(message)
    channel = channel or ChannelSpec()
    ctx = context or prepare(cover, key, strategy, channel, equal_spread=equal_spread and not simulate,
                             cost_model=cost_model)
    cover, key, schedule, coder = ctx.cover, ctx.key, ctx.schedule, ctx.coder
    strategy_name = schedule.strategy.kind if schedule.strategy else str(strategy)
    n_coeff = cover.coeffs.size
    cap = ctx.capacity_bits
    report = EmbedReport(cover.width, cover.height, cover.quality, strategy_name,
                         channel.image_filter.name if channel.image_filter is not None else None,
                         "simulate" if simulate else "stc", bool(equal_spread), int(len(bits)), 0,
                         cap, None if cap is None else cap / n_coeff)
    if ctx.initial_maps is None and not (equal_spread and not simulate):
        raise ValueError("the context has no initial robust maps; prepare it without equal_spread")
    if ctx.initial_maps is not None:
        report.initial_robust_fraction = [m.robust_fraction() for m in ctx.initial_maps]

    if len(bits) == 0:
        report.success = True
        report.compressor_calls = coder.calls
        report.seconds = time.perf_counter() - start
        return cover.copy(), report

    if simulate:
        stego = _simulate(ctx, len(bits), seed, report)
    else:
        plan, layout, codes = _layout_for_embedding(ctx, len(bits), equal_spread)
        header_bits = encode_header(len(bits), codes, plan.seed)
        report.header_bits = int(plan.counts.sum())
        stego = _embed_with_layout(ctx, plan.pieces(header_bits, key), bits, plan.counts, layout, height, report)
        if verify:
            received = simulate_channel(stego, channel, coder)
            try:
                got = extract(received, key, strategy, channel, equal_spread=equal_spread, height=height,
                              schedule=schedule)
            except InvalidLength as exc:
                raise ChannelMismatch(f"the header did not survive the channel: {exc}") from exc
            if len(got) != len(bits) or np.any(got != bits):
                raise ChannelMismatch("the message could not be recovered after the channel")
    report.success = True
    report.compressor_calls = coder.calls
    report.seconds = time.perf_counter() - start
    return stego, report


def _simulate(ctx, n_bits, seed, report):
    robust = robust_cost_update(ctx.costs, ctx.initial_maps)
    flat = CostMap(robust.plus.reshape(-1), robust.minus.reshape(-1))
    rates = solve_change_rates(flat, n_bits)
    delta = simulate_embedding(rates.plus, rates.minus, seed).reshape(ctx.cover.coeffs.shape)
    report.total_flips = int(np.count_nonzero(delta))
    return ctx.cover.with_coeffs(ctx.cover.coeffs + delta)


def _slices(bits, lengths):
    """Split ``bits`` into consecutive pieces of the given lengths, in lattice order."""
    edges = np.concatenate([[0], np.cumsum(lengths)])
    return [bits[edges[i]:edges[i + 1]] for i in range(len(lengths))]


def _segments(seg, n_header, n_message):
    """``(members, bits, label)`` for the header and message parts of one lattice."""
    return [(slice(0, seg), n_header, "stc-header"), (slice(seg, None), n_message, "stc")]


def _embed_with_layout(ctx, head_pieces, bits, header, layout, height, report):
    schedule, coder, key = ctx.schedule, ctx.coder, ctx.key
    seg = header_segments(schedule, header)
    msg_pieces = _slices(bits, layout)

    coeffs = ctx.cover.coeffs.copy()
    flat = coeffs.reshape(-1, 64)
    r0 = ctx.r0
    for lat in range(schedule.n_lattices):
        if header[lat] + layout[lat] == 0:
            continue
        rmap = classify_lattice(coeffs, schedule, lat, coder, r0=r0)
        order = _element_order(key, lat, len(rmap))
        blocks, modes = rmap.blocks[order], rmap.modes[order]
        values = rmap.values[order]
        member_costs = robust_cost_update(ctx.costs.take(rmap.blocks, rmap.modes), rmap)
        plus, minus = member_costs.plus[order], member_costs.minus[order]
        flip_cost = np.minimum(plus, minus)
        parity = parity_of(rmap.predicted[order])
        flips = np.zeros(len(order), dtype=bool)
        cost = 0.0
        pieces = (head_pieces[lat], msg_pieces[lat])
        for (part, m_bits, label), piece in zip(_segments(seg[lat], header[lat], layout[lat]), pieces):
            if m_bits == 0:
                continue
            live = int(np.count_nonzero(np.isfinite(flip_cost[part])))
            if m_bits > live:
                raise EmbeddingInfeasible(f"lattice {lat} must carry {m_bits} bits but only {live} members "
                                          f"are robust", lattice=lat)
            params = _stc_params(key, lat, len(parity[part]), int(m_bits), height, label)
            try:
                flips[part], c = stc_encode(parity[part], flip_cost[part], piece, params)
            except EmbeddingInfeasible as exc:
                raise EmbeddingInfeasible(f"lattice {lat}: {exc}", lattice=lat) from exc
            cost += c
        direction = flip_directions(plus, minus, values)
        flat[blocks[flips], modes[flips]] += direction[flips]
        counts = rmap.counts()
        report.lattices.append(LatticeRecord(lat, **counts, headerBits=int(header[lat]),
                                             messageBits=int(layout[lat]), flips=int(flips.sum()),
                                             cost=float(cost)))
        report.total_flips += int(flips.sum())
        # the pseudo-stego changed, so its recompression has to be redone
        r0 = None if flips.any() else r0
    return ctx.cover.with_coeffs(coeffs)


def _read_lattice(parity_flat, schedule, key, lat, n_bits, height, part=slice(None), label="stc"):
    blocks, modes = schedule.members(lat)
    order = _element_order(key, lat, len(blocks))[part]
    params = _stc_params(key, lat, len(order), n_bits, height, label)
    return stc_extract(parity_flat[blocks[order], modes[order]], params)


def _read_bits(parity, schedule, key, counts, height, seed):
    seg = header_segments(schedule, counts)
    bits = np.concatenate([_read_lattice(parity, schedule, key, lat, int(counts[lat]), height,
                                         slice(0, seg[lat]), "stc-header") for lat in np.flatnonzero(counts)])
    return _whiten(bits, key, seed)


def _find_header(parity, schedule, key, equal_spread, height):
    """Try the fixed placements, then every anchor; the checksums tell which one was used.

    Returns the header bits per lattice (locator included) with the decoded
    length and weights.
    """
    n_header = header_size(equal_spread)
    for plan in _header_plans(schedule, n_header):
        try:
            n_bits, codes = decode_header(_read_bits(parity, schedule, key, plan.header, height, plan.seed),
                                          equal_spread, plan.seed)
            return plan.counts, n_bits, codes
        except InvalidLength:
            continue
    lattices = np.arange(schedule.n_lattices)
    for anchor in range(64):
        try:
            locator = _spread(schedule, lattices[lattices % 64 == anchor], LOCATOR_BITS)
            positions = decode_locator(_read_bits(parity, schedule, key, locator, height, LOCATOR_SEED + anchor),
                                       anchor)
            locator, header = anchor_layout(schedule, anchor, positions, n_header)
            seed = ANCHOR_SEED + anchor
            n_bits, codes = decode_header(_read_bits(parity, schedule, key, header, height, seed), equal_spread,
                                          seed)
            return header + locator, n_bits, codes
        except (InvalidLength, PayloadExceedsCapacity):
            continue
    raise InvalidLength("no header found; wrong key or settings?")


def extract(received, key, strategy="lowhigh", channel=None, *, equal_spread=False, height=10,
            lattice_lengths=None, schedule=None):
    """Recover the message bits from a plane that went through the channel.

    No recompression is needed. ``lattice_lengths`` bypasses the in-band
    header for planes embedded with explicit per-lattice lengths.
    """
    key = StegoKey(key)
    channel = channel or ChannelSpec()
    schedule = schedule or make_schedule(received, key, strategy, channel.filtered)
    parity = parity_of(received.coeffs).reshape(-1, 64)
    if lattice_lengths is not None:
        lengths = np.asarray(lattice_lengths, dtype=np.int64)
        if len(lengths) != schedule.n_lattices:
            raise InvalidLength(f"expected {schedule.n_lattices} lattice lengths, got {len(lengths)}")
        parts = [_read_lattice(parity, schedule, key, lat, int(n), height)
                 for lat, n in enumerate(lengths) if n]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)

    header, n_bits, codes = _find_header(parity, schedule, key, equal_spread, height)
    room = int(message_room(schedule, header).sum())
    if n_bits > room:
        raise InvalidLength(f"header announces {n_bits} bits but the image holds at most {room}; "
                            f"wrong key or settings?")
    if n_bits == 0:
        return np.zeros(0, dtype=np.uint8)
    layout = message_layout(schedule, header, n_bits, codes)
    seg = header_segments(schedule, header)
    parts = [_read_lattice(parity, schedule, key, lat, int(n), height, slice(seg[lat], None))
             for lat, n in enumerate(layout) if n]
    return np.concatenate(parts)


def embed_raw(cover, message, key, lattice_lengths, strategy="lowhigh", channel=None, *, height=10,
              cost_model="quantstep"):
    """Embed with caller-supplied per-lattice lengths and no header."""
    bits = check_bits(message)
    lengths = np.asarray(lattice_lengths, dtype=np.int64)
    if lengths.sum() != len(bits):
        raise InvalidLength("lattice lengths must add up to the message length")
    channel = channel or ChannelSpec()
    coder = channel.make_coder(cover)
    key = StegoKey(key)
    schedule = make_schedule(cover, key, strategy, channel.filtered)
    if len(lengths) != schedule.n_lattices:
        raise InvalidLength(f"expected {schedule.n_lattices} lattice lengths, got {len(lengths)}")
    ctx = EmbedContext(cover, key, schedule, coder, None, base_costs(cover, cost_model), None)
    report = EmbedReport(cover.width, cover.height, cover.quality, schedule.strategy.kind, None, "stc",
                         False, len(bits), 0, None, None)
    coeffs = _embed_with_layout(ctx, _slices(np.zeros(0, dtype=np.uint8), np.zeros_like(lengths)), bits,
                                np.zeros_like(lengths), lengths, height, report)
    report.success = True
    report.compressor_calls = coder.calls
    return coeffs, report
