"""Baseline sequential grayscale JPEG reader/writer working on coefficients.

The reader never produces pixels. It recovers the quantized DCT coefficients
exactly (DC prediction, run-length/Huffman AC coding, byte stuffing, restart
intervals) and keeps APPn/COM segments so they can be written back verbatim.
The writer always emits the Annex K Huffman tables.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..exceptions import CoefficientOverflow, MalformedJpeg, UnsupportedJpeg
from .core import ZIGZAG, CoefficientPlane, QuantTable

SOI, EOI, SOS, DQT, DHT, DRI = 0xD8, 0xD9, 0xDA, 0xDB, 0xC4, 0xDD
SOF0, SOF1 = 0xC0, 0xC1
RST0 = 0xD0

# Annex K.3 typical Huffman tables: (code counts per length 1..16, symbols).
DC_LUMINANCE = (
    (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0),
    tuple(range(12)),
)
AC_LUMINANCE = (
    (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D),
    (
        0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51,
        0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1,
        0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18,
        0x19, 0x1A, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39,
        0x3A, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57,
        0x58, 0x59, 0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
        0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92,
        0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7,
        0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3,
        0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8,
        0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2,
        0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
    ),
)

JFIF_APP0 = (0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")


def _canonical_codes(counts, symbols):
    """Map symbol -> (code, length) for a canonical Huffman table."""
    codes = {}
    code = 0
    k = 0
    for length, count in enumerate(counts, start=1):
        for _ in range(count):
            codes[symbols[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return codes


class _HuffmanDecoder:
    """16-bit peek lookup table."""

    def __init__(self, counts, symbols):
        if sum(counts) != len(symbols):
            raise MalformedJpeg("Huffman table symbol count does not match code counts")
        self.symbol = np.zeros(1 << 16, dtype=np.int32)
        self.length = np.zeros(1 << 16, dtype=np.int32)
        for sym, (code, length) in _canonical_codes(counts, symbols).items():
            lo = code << (16 - length)
            hi = (code + 1) << (16 - length)
            self.symbol[lo:hi] = sym
            self.length[lo:hi] = length
        self.symbol = self.symbol.tolist()
        self.length = self.length.tolist()


@dataclass
class JpegFile:
    """A parsed baseline grayscale JPEG.

    ``segments`` holds (marker, payload) pairs of APPn/COM segments in file
    order; they are re-emitted unchanged by :func:`serialize`.
    """

    plane: CoefficientPlane
    segments: list = field(default_factory=list)
    restart_interval: int = 0
    table_id: int = 0


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data + b"\x00\x00\x00\x00"
        self.nbits = 8 * len(data)
        self.pos = 0

    def peek16(self):
        p = self.pos
        i = p >> 3
        word = (self.data[i] << 16) | (self.data[i + 1] << 8) | self.data[i + 2]
        return (word >> (8 - (p & 7))) & 0xFFFF

    def read(self, n):
        if n == 0:
            return 0
        p = self.pos
        if p + n > self.nbits:
            raise MalformedJpeg("entropy-coded segment is truncated")
        i = p >> 3
        word = int.from_bytes(self.data[i:i + 4], "big")
        self.pos = p + n
        return (word >> (32 - (p & 7) - n)) & ((1 << n) - 1)

    def decode(self, table):
        look = self.peek16()
        length = table.length[look]
        if length == 0 or self.pos + length > self.nbits:
            raise MalformedJpeg("invalid or truncated Huffman code")
        self.pos += length
        return table.symbol[look]


def _extend(value, size):
    if size and value < (1 << (size - 1)):
        return value - (1 << size) + 1
    return value


def _unstuff(segment):
    return segment.replace(b"\xff\x00", b"\xff")


def _split_scan(data, start):
    """Return the entropy-coded intervals (split at RSTn) and the end offset."""
    intervals = []
    i = start
    seg_start = start
    n = len(data)
    while True:
        j = data.find(b"\xff", i)
        if j < 0 or j + 1 >= n:
            raise MalformedJpeg("scan data is not terminated by a marker")
        nxt = data[j + 1]
        if nxt == 0x00 or nxt == 0xFF:
            i = j + 1 if nxt == 0xFF else j + 2
            continue
        if RST0 <= nxt <= RST0 + 7:
            intervals.append(_unstuff(data[seg_start:j]))
            i = seg_start = j + 2
            continue
        intervals.append(_unstuff(data[seg_start:j]))
        return intervals, j


def _decode_scan(intervals, n_blocks, restart, dc_table, ac_table):
    zz = ZIGZAG.tolist()
    out = []
    per_interval = restart if restart else n_blocks
    block = 0
    for segment in intervals:
        if block >= n_blocks:
            break
        reader = _BitReader(segment)
        pred = 0
        for _ in range(min(per_interval, n_blocks - block)):
            size = reader.decode(dc_table)
            if size > 11:
                raise MalformedJpeg(f"invalid DC magnitude category {size}")
            pred += _extend(reader.read(size), size)
            row = [0] * 64
            row[0] = pred
            k = 1
            while k < 64:
                rs = reader.decode(ac_table)
                run, size = rs >> 4, rs & 15
                if size == 0:
                    if run == 15:
                        k += 16
                        continue
                    break
                k += run
                if k > 63:
                    raise MalformedJpeg("AC run exceeds block length")
                row[zz[k]] = _extend(reader.read(size), size)
                k += 1
            out.append(row)
            block += 1
    if block != n_blocks:
        raise MalformedJpeg(f"scan holds {block} blocks, frame needs {n_blocks}")
    return np.array(out, dtype=np.int32).reshape(n_blocks, 64)


def parse(data: bytes) -> JpegFile:
    """Parse a baseline single-component JPEG into coefficients."""
    data = bytes(data)
    if len(data) < 4 or data[0] != 0xFF or data[1] != SOI:
        raise MalformedJpeg("missing SOI marker")
    pos = 2
    qtables = {}
    dc_tables, ac_tables = {}, {}
    segments = []
    restart = 0
    frame = None
    coeffs = None
    n = len(data)
    while True:
        while pos < n and data[pos] != 0xFF:
            pos += 1
        while pos < n and data[pos] == 0xFF:
            pos += 1
        if pos >= n:
            raise MalformedJpeg("stream ends before EOI")
        marker = data[pos]
        pos += 1
        if marker == EOI:
            break
        if RST0 <= marker <= RST0 + 7 or marker == 0x01:
            continue
        if pos + 2 > n:
            raise MalformedJpeg("truncated marker segment")
        (length,) = struct.unpack(">H", data[pos:pos + 2])
        if length < 2 or pos + length > n:
            raise MalformedJpeg(f"segment 0x{marker:02X} overruns the stream")
        body = data[pos + 2:pos + length]
        pos += length

        if marker == DQT:
            i = 0
            while i < len(body):
                pq, tq = body[i] >> 4, body[i] & 15
                size = 128 if pq else 64
                if i + 1 + size > len(body):
                    raise MalformedJpeg("truncated DQT segment")
                fmt = ">64H" if pq else "64B"
                qtables[tq] = QuantTable.from_zigzag(struct.unpack(fmt, body[i + 1:i + 1 + size]))
                i += 1 + size
        elif marker == DHT:
            i = 0
            while i < len(body):
                if i + 17 > len(body):
                    raise MalformedJpeg("truncated DHT segment")
                tc, th = body[i] >> 4, body[i] & 15
                counts = tuple(body[i + 1:i + 17])
                total = sum(counts)
                symbols = tuple(body[i + 17:i + 17 + total])
                if len(symbols) != total:
                    raise MalformedJpeg("truncated DHT segment")
                (ac_tables if tc else dc_tables)[th] = _HuffmanDecoder(counts, symbols)
                i += 17 + total
        elif marker == DRI:
            (restart,) = struct.unpack(">H", body[:2])
        elif marker in (SOF0, SOF1):
            if frame is not None:
                raise UnsupportedJpeg("multiple frames are not supported")
            precision, height, width, ncomp = struct.unpack(">BHHB", body[:6])
            if precision != 8:
                raise UnsupportedJpeg(f"{precision}-bit samples are not supported")
            if ncomp != 1:
                raise UnsupportedJpeg(f"{ncomp} components; only grayscale is supported")
            if height == 0:
                raise UnsupportedJpeg("DNL-defined heights are not supported")
            comp_id, _, tq = body[6], body[7], body[8]
            frame = (width, height, comp_id, tq)
        elif 0xC2 <= marker <= 0xCF and marker not in (DHT, 0xC8, 0xCC):
            raise UnsupportedJpeg(f"SOF marker 0x{marker:02X} (progressive, lossless or "
                                  "arithmetic coding) is not supported")
        elif marker == SOS:
            if frame is None:
                raise MalformedJpeg("SOS before SOF")
            if body[0] != 1:
                raise UnsupportedJpeg("multi-component scans are not supported")
            td, ta = body[2] >> 4, body[2] & 15
            if td not in dc_tables or ta not in ac_tables:
                raise MalformedJpeg("scan references an undefined Huffman table")
            width, height = frame[0], frame[1]
            bx, by = -(-width // 8), -(-height // 8)
            intervals, pos = _split_scan(data, pos)
            coeffs = _decode_scan(intervals, bx * by, restart, dc_tables[td], ac_tables[ta])
            coeffs = coeffs.reshape(by, bx, 64)
        elif 0xE0 <= marker <= 0xEF or marker == 0xFE:
            segments.append((marker, body))
        # Other markers (DNL, DAC, JPGn...) are skipped.

    if frame is None or coeffs is None:
        raise MalformedJpeg("no frame or scan found")
    width, height, _, tq = frame
    if tq not in qtables:
        raise MalformedJpeg(f"frame references undefined quantization table {tq}")
    plane = CoefficientPlane(coeffs, qtables[tq], width, height)
    return JpegFile(plane, segments, restart, tq)


def read_jpeg(path) -> CoefficientPlane:
    return parse(Path(path).read_bytes()).plane


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.nacc = 0

    def write(self, value, n):
        self.acc = (self.acc << n) | (value & ((1 << n) - 1))
        self.nacc += n
        while self.nacc >= 8:
            self.nacc -= 8
            byte = (self.acc >> self.nacc) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self.acc &= (1 << self.nacc) - 1

    def flush(self):
        if self.nacc:
            self.write((1 << (8 - self.nacc)) - 1, 8 - self.nacc)
        data = bytes(self.out)
        self.out = bytearray()
        return data


def _category(v):
    return abs(int(v)).bit_length()


def _segment(marker, body):
    return struct.pack(">BBH", 0xFF, marker, len(body) + 2) + body


def _dht_body(tc, th, table):
    counts, symbols = table
    return bytes([(tc << 4) | th]) + bytes(counts) + bytes(symbols)


def _encode_scan(flat, restart):
    dc_codes = _canonical_codes(*DC_LUMINANCE)
    ac_codes = _canonical_codes(*AC_LUMINANCE)
    zz = flat[:, ZIGZAG]
    writer = _BitWriter()
    chunks = []
    pred = 0
    for b, block in enumerate(zz.tolist()):
        if restart and b and b % restart == 0:
            chunks.append(writer.flush())
            chunks.append(bytes([0xFF, RST0 + ((b // restart - 1) & 7)]))
            pred = 0
        diff = block[0] - pred
        pred = block[0]
        size = _category(diff)
        if size > 11:
            raise CoefficientOverflow(f"DC difference {diff} in block {b} exceeds the baseline range")
        code, length = dc_codes[size]
        writer.write(code, length)
        if size:
            writer.write(diff if diff > 0 else diff - 1, size)
        run = 0
        last = 63
        while last > 0 and block[last] == 0:
            last -= 1
        for k in range(1, last + 1):
            v = block[k]
            if v == 0:
                run += 1
                continue
            while run > 15:
                code, length = ac_codes[0xF0]
                writer.write(code, length)
                run -= 16
            size = _category(v)
            if size > 10:
                raise CoefficientOverflow(f"AC value {v} in block {b} exceeds the baseline range")
            code, length = ac_codes[(run << 4) | size]
            writer.write(code, length)
            writer.write(v if v > 0 else v - 1, size)
            run = 0
        if last < 63:
            code, length = ac_codes[0x00]
            writer.write(code, length)
    chunks.append(writer.flush())
    return b"".join(chunks)


def serialize(obj, segments=None, restart_interval=None) -> bytes:
    """Write a :class:`CoefficientPlane` or :class:`JpegFile` as baseline JPEG."""
    if isinstance(obj, JpegFile):
        plane = obj.plane
        segments = obj.segments if segments is None else segments
        restart_interval = obj.restart_interval if restart_interval is None else restart_interval
    else:
        plane = obj
    segments = [JFIF_APP0] if not segments else segments
    restart_interval = restart_interval or 0

    steps = plane.table.zigzag()
    if steps.max() > 255:
        dqt = bytes([0x10]) + struct.pack(">64H", *steps.tolist())
    else:
        dqt = bytes([0x00]) + bytes(steps.tolist())
    sof = struct.pack(">BHHB", 8, plane.height, plane.width, 1) + bytes([1, 0x11, 0])
    dht = _dht_body(0, 0, DC_LUMINANCE) + _dht_body(1, 0, AC_LUMINANCE)
    sos = bytes([1, 1, 0x00, 0, 63, 0])

    parts = [b"\xff\xd8"]
    parts += [_segment(m, body) for m, body in segments]
    parts.append(_segment(DQT, dqt))
    parts.append(_segment(SOF0, sof))
    parts.append(_segment(DHT, dht))
    if restart_interval:
        parts.append(_segment(DRI, struct.pack(">H", restart_interval)))
    parts.append(_segment(SOS, sos))
    parts.append(_encode_scan(plane.flat, restart_interval))
    parts.append(b"\xff\xd9")
    return b"".join(parts)


def write_jpeg(path, obj, **kwargs):
    Path(path).write_bytes(serialize(obj, **kwargs))
