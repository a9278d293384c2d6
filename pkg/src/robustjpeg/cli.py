"""Command line interface: embed, extract, robust-map and success-rate.

Exit codes
----------
0 success, 1 other library error, 2 usage error, 3 payload exceeds capacity,
4 embedding infeasible in some lattice, 5 inconsistent lengths, 6 unreadable
or unsupported JPEG, 7 message lost in the channel, 8 external coder failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .costs import payload_bits
from .exceptions import RobustJpegError
from .jpeg.core import QuantTable, compress
from .jpeg.stream import JpegFile, parse, serialize
from .keys import StegoKey, keyed_uniforms
from .pipeline import ChannelSpec, embed, extract, make_schedule, simulate_channel
from .robustness import initial_robust_map
from .validation import bits_to_bytes

log = logging.getLogger("robustjpeg")

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".pgm", ".bmp", ".tif", ".tiff", ".gif", ".webp"}


def load_pixels(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def load_cover(path, qf=None, table=None):
    """Parse a JPEG as is, or compress any other raster at ``qf`` / ``table``.

    Returns ``(JpegFile, compressed_here)``.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"\xff\xd8":
        return parse(data), False
    if table is None:
        table = QuantTable.from_qf(qf or 75)
    plane = compress(load_pixels(path), table, qf)
    return JpegFile(plane), True


def _table_arg(args):
    return QuantTable.load(args.table) if getattr(args, "table", None) else None


def _channel(args):
    if getattr(args, "channel", "internal") == "external":
        return ChannelSpec("external", args.filter, args.coder_cmd)
    return ChannelSpec("internal", args.filter)


def random_message(n_bits, seed):
    return (keyed_uniforms(seed, (n_bits,)) < 0.5).astype(np.uint8)


def cmd_embed(args):
    jpeg, _ = load_cover(args.input, args.qf, _table_arg(args))
    cover = jpeg.plane
    if args.message is not None:
        message = np.unpackbits(np.frombuffer(Path(args.message).read_bytes(), dtype=np.uint8))
    else:
        n = payload_bits(cover, args.rate, "bpnzac") // 8 * 8
        message = random_message(n, args.seed)
        if args.message_out:
            Path(args.message_out).write_bytes(bits_to_bytes(message))
    stego, report = embed(cover, message, StegoKey(args.key), args.strategy, _channel(args),
                          equal_spread=args.equal_spread, cost_model=args.cost_model, simulate=args.simulate,
                          seed=args.seed, height=args.height)
    Path(args.output).write_bytes(serialize(JpegFile(stego, jpeg.segments, jpeg.restart_interval)))
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    print(f"embedded {report.message_bits} bits with {report.total_flips} changes "
          f"({report.compressor_calls} recompressions)")
    return 0


def cmd_extract(args):
    received = parse(Path(args.input).read_bytes()).plane
    channel = _channel(args)
    if args.apply_channel:
        received = simulate_channel(received, channel)
    bits = extract(received, StegoKey(args.key), args.strategy, channel, equal_spread=args.equal_spread,
                   height=args.height)
    if len(bits) % 8:
        raise RobustJpegError(f"recovered {len(bits)} bits, not a whole number of bytes")
    Path(args.output).write_bytes(bits_to_bytes(bits))
    print(f"extracted {len(bits) // 8} bytes")
    return 0


ROBUST_MAP_FIELDS = ["set", "latticeIndex", "nBoth", "nPlusOnly", "nMinusOnly", "nNonRobust", "robustFraction"]


def robust_map_rows(plane, key, strategy, channel, label="initial"):
    schedule = make_schedule(plane, key, strategy, channel.filtered)
    maps = initial_robust_map(plane, schedule, channel.make_coder(plane))
    return [dict(set=label, latticeIndex=m.lattice, **m.counts(), robustFraction=round(m.robust_fraction(), 6))
            for m in maps]


def cmd_robust_map(args):
    key = StegoKey(args.key)
    channel = _channel(args)
    cover = load_cover(args.input, args.qf, _table_arg(args))[0].plane
    rows = robust_map_rows(cover, key, args.strategy, channel)
    if args.stego:
        stego = parse(Path(args.stego).read_bytes()).plane
        rows += robust_map_rows(stego, key, args.strategy, channel, "post")
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=ROBUST_MAP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _trial(job):
    """One (image, QF, strategy, rate) cell of the success-rate grid."""
    path, qf, strategy, rate, key, filt, seed = job
    started = time.perf_counter()
    row = dict(image=Path(path).name, quality=qf, strategy=strategy, rate=rate, success=False, error=None,
               bits=0, flips=0, compressor_calls=0, capacity_bits=None, capacity_bpc=None)
    try:
        cover = compress(load_pixels(path), QuantTable.from_qf(qf), qf)
        channel = ChannelSpec(image_filter=filt)
        message = random_message(payload_bits(cover, rate, "bpnzac"), seed)
        row["bits"] = int(len(message))
        stego, report = embed(cover, message, key, strategy, channel)
        # an empty message leaves the cover untouched, so there is no header to read
        got = extract(simulate_channel(stego, channel), key, strategy, channel) if len(message) else message
        row.update(success=bool(len(got) == len(message) and np.array_equal(got, message)),
                   flips=report.total_flips, compressor_calls=report.compressor_calls,
                   capacity_bits=report.capacity_bits, capacity_bpc=report.capacity_bpc)
    except RobustJpegError as exc:
        row["error"] = type(exc).__name__
    row["seconds"] = round(time.perf_counter() - started, 3)
    return row


def load_config(path):
    cfg = json.loads(Path(path).read_text())
    base = Path(path).parent
    covers = Path(cfg["covers"])
    if not covers.is_absolute():
        covers = base / covers
    return dict(covers=covers,
                qualities=[int(q) for q in cfg.get("qualities", [75, 85, 92, 95])],
                strategies=list(cfg.get("strategies", ["lowhigh", "highlow", "random"])),
                rates=[float(r) for r in cfg.get("rates", [0.1, 0.2, 0.3])],
                key=cfg.get("key", "00"),
                filter=cfg.get("filter"),
                seed=int(cfg.get("seed", 0)),
                workers=int(cfg.get("workers", 1)),
                output=cfg.get("output"))


def summarize(rows):
    cells = {}
    for row in rows:
        cells.setdefault((row["quality"], row["strategy"], row["rate"]), []).append(row["success"])
    return [dict(quality=q, strategy=s, rate=r, images=len(v), success_rate=float(np.mean(v)))
            for (q, s, r), v in sorted(cells.items())]


def run_success_rate(cfg):
    images = sorted(p for p in Path(cfg["covers"]).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise RobustJpegError(f"no cover images found in {cfg['covers']}")
    key = StegoKey(cfg["key"])
    jobs = [(str(p), q, s, r, key, cfg["filter"], cfg["seed"] + i)
            for i, p in enumerate(images) for q in cfg["qualities"] for s in cfg["strategies"]
            for r in cfg["rates"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            rows = list(pool.map(_trial, jobs))
    else:
        rows = [_trial(job) for job in jobs]
    return {"version": __version__, "filter": cfg["filter"], "trials": rows, "summary": summarize(rows)}


def cmd_success_rate(args):
    cfg = load_config(args.config)
    report = run_success_rate(cfg)
    text = json.dumps(report, indent=2)
    output = args.output or cfg["output"]
    if output:
        Path(output).write_text(text)
    for cell in report["summary"]:
        print(f"QF {cell['quality']:3d} {cell['strategy']:8s} {cell['rate']:.2f} bpnzAC: "
              f"{100 * cell['success_rate']:.0f}% of {cell['images']}")
    return 0


def _add_common(p, *, cover=False):
    p.add_argument("--key", required=True, help="stego key as a hex string")
    p.add_argument("--strategy", default="lowhigh", choices=["lowhigh", "highlow", "random"])
    p.add_argument("--filter", default=None, choices=["gaussian", "sharpen"],
                   help="filter applied by the channel before recompression")
    p.add_argument("--channel", default="internal", choices=["internal", "external"])
    p.add_argument("--coder-cmd", help='external coder template, e.g. "convert {in} {out}"')
    if cover:
        group = p.add_mutually_exclusive_group()
        group.add_argument("--qf", type=int, help="quality used when the input is not a JPEG")
        group.add_argument("--table", help="file with 64 quantization steps in zigzag order")


def build_parser():
    parser = argparse.ArgumentParser(prog="robustjpeg", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="hide a message in a grayscale image")
    p.add_argument("input")
    p.add_argument("output", help="stego JPEG")
    _add_common(p, cover=True)
    payload = p.add_mutually_exclusive_group(required=True)
    payload.add_argument("--message", help="file whose bytes are hidden")
    payload.add_argument("--rate", type=float, help="random message of this many bits per nonzero AC coefficient")
    p.add_argument("--message-out", help="where to save the random message used with --rate")
    p.add_argument("--cost-model", default="quantstep")
    p.add_argument("--equal-spread", action="store_true")
    p.add_argument("--simulate", action="store_true", help="draw changes at the optimal rates, no coding")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=10, help="STC constraint height")
    p.add_argument("--report", help="write a JSON report here")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover a message")
    p.add_argument("input")
    p.add_argument("output", help="file for the recovered bytes")
    _add_common(p)
    p.add_argument("--equal-spread", action="store_true")
    p.add_argument("--height", type=int, default=10)
    p.add_argument("--apply-channel", action="store_true",
                   help="pass the input through the channel first (for stego files straight from embed)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("robust-map", help="per-lattice robustness counts as CSV")
    p.add_argument("input")
    _add_common(p, cover=True)
    p.add_argument("--stego", help="also report the robust set of this stego image")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_robust_map)

    p = sub.add_parser("success-rate", help="run an embedding grid from a JSON config")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_success_rate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "channel", None) == "external" and not args.coder_cmd:
        parser.error("--channel external needs --coder-cmd")
    try:
        return args.func(args)
    except RobustJpegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
