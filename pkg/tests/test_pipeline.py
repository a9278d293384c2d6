import json
from importlib import resources

import numpy as np
import pytest

import robustjpeg.pipeline as pipeline
from corpus import corpus, smooth_image
from robustjpeg.exceptions import (
    ChannelMismatch,
    ExternalCoderFailure,
    InvalidLength,
    PayloadExceedsCapacity,
    RobustJpegError,
)
from robustjpeg.jpeg.core import InternalCoder, QuantTable, compress
from robustjpeg.pipeline import (
    ChannelSpec,
    ExternalCoder,
    anchor_layout,
    decode_header,
    decode_locator,
    embed,
    embed_raw,
    encode_header,
    encode_locator,
    extract,
    choose_header_plan,
    header_layout,
    header_segments,
    header_size,
    make_schedule,
    message_layout,
    prepare,
    simulate_channel,
)
from robustjpeg.robustness import Label

KEY = "5eed"


def camera(size=128, qf=75):
    from skimage import data

    return compress(data.camera()[100:100 + size, 150:150 + size], QuantTable.from_qf(qf), qf)


def message(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, n).astype(np.uint8)


@pytest.fixture
def recorded_maps(monkeypatch):
    """Robustness maps computed during embedding, keyed by lattice (last one wins)."""
    maps = {}
    original = pipeline.classify_lattice

    def record(coeffs, schedule, lat, coder, r0=None):
        m = original(coeffs, schedule, lat, coder, r0=r0)
        maps[lat] = m
        return m

    monkeypatch.setattr(pipeline, "classify_lattice", record)
    return maps


def assert_changes_were_robust(cover, stego, maps):
    diff = (stego.coeffs - cover.coeffs).reshape(-1, 64)
    changed = set(zip(*np.nonzero(diff)))
    allowed = {}
    for m in maps.values():
        for b, n, label in zip(m.blocks, m.modes, m.labels):
            allowed[(int(b), int(n))] = int(label)
    for b, n in changed:
        step = int(diff[b, n])
        label = allowed[(int(b), int(n))]
        assert label != Label.NON_ROBUST
        assert (step == 1 and label in (Label.BOTH, Label.PLUS_ONLY)) or \
            (step == -1 and label in (Label.BOTH, Label.MINUS_ONLY))


def test_empty_message_returns_cover():
    cover = camera(64)
    stego, report = embed(cover, b"", KEY)
    assert stego == cover and report.success and report.total_flips == 0


def test_flat_gray_sixteen_bytes(recorded_maps):
    cover = compress(np.full((64, 64), 128, dtype=np.uint8), QuantTable.from_qf(75), 75)
    secret = b"sixteen byte msg"
    stego, report = embed(cover, secret, KEY, "lowhigh")
    got = extract(simulate_channel(stego), KEY, "lowhigh")
    assert np.packbits(got).tobytes() == secret
    assert report.total_flips > 0
    assert_changes_were_robust(cover, stego, recorded_maps)


@pytest.mark.parametrize("strategy", ["lowhigh", "highlow", "random"])
def test_round_trip_and_stego_validity(strategy, recorded_maps):
    cover = camera()
    bits = message(600, 1)
    stego, report = embed(cover, bits, KEY, strategy)
    assert np.array_equal(extract(simulate_channel(stego), KEY, strategy), bits)
    assert report.compressor_calls <= 3 * 64 * 2
    assert_changes_were_robust(cover, stego, recorded_maps)


def test_robust_positions_keep_embedded_values(recorded_maps):
    cover = camera()
    stego, report = embed(cover, message(500, 2), KEY, "random")
    received = simulate_channel(stego)
    for rec in report.lattices:
        m = recorded_maps[rec.lattice]
        robust = m.labels != Label.NON_ROBUST
        assert np.array_equal(received.coeffs.reshape(-1, 64)[m.blocks[robust], m.modes[robust]],
                              stego.coeffs.reshape(-1, 64)[m.blocks[robust], m.modes[robust]])


def test_extraction_needs_no_recompression(monkeypatch):
    cover = camera(64)
    bits = message(200, 3)
    received = simulate_channel(embed(cover, bits, KEY)[0])

    def boom(*args, **kwargs):
        raise AssertionError("extraction must not recompress")

    monkeypatch.setattr(InternalCoder, "recompress", boom)
    monkeypatch.setattr(pipeline, "classify_lattice", boom)
    assert np.array_equal(extract(received, KEY), bits)


def test_wrong_key_does_not_recover():
    cover = camera()
    bits = message(256, 4)
    received = simulate_channel(embed(cover, bits, KEY)[0])
    for other in ("5eee", "00", "5eed00"):
        try:
            got = extract(received, other)
        except RobustJpegError:
            continue
        assert len(got) != len(bits) or np.any(got != bits)


def test_second_channel_pass_keeps_robust_values(recorded_maps):
    cover = camera()
    bits = message(800, 5)
    stego, report = embed(cover, bits, KEY, "lowhigh")
    once = simulate_channel(stego).coeffs.reshape(-1, 64)
    twice = simulate_channel(simulate_channel(stego)).coeffs.reshape(-1, 64)
    robust = np.zeros(once.shape, dtype=bool)
    for rec in report.lattices:
        m = recorded_maps[rec.lattice]
        live = m.labels != Label.NON_ROBUST
        robust[m.blocks[live], m.modes[live]] = True
    assert np.array_equal(once[robust], twice[robust])
    # a second pass may only move wet members, whose value is not a fixed point
    moved = once != twice
    assert not np.any(moved & robust)


@pytest.mark.parametrize("image_filter,image,n_bits", [
    ("gaussian", lambda: smooth_image()[:128, :128], 300),
    # sharpening leaves little beyond the first two positions of each class
    ("sharpen", lambda: corpus()["ramp_h"], 64),
])
def test_filtered_channel_is_errorless(image_filter, image, n_bits, recorded_maps):
    cover = compress(image(), QuantTable.from_qf(75), 75)
    channel = ChannelSpec(image_filter=image_filter)
    bits = message(n_bits, 6)
    stego, report = embed(cover, bits, KEY, "lowhigh", channel)
    assert report.compressor_calls <= 9 * 3 * 64 * 2
    assert report.filter == image_filter
    assert np.array_equal(extract(simulate_channel(stego, channel), KEY, "lowhigh", channel), bits)
    assert_changes_were_robust(cover, stego, recorded_maps)


def test_equal_spread_random():
    cover = camera()
    bits = message(300, 7)
    stego, report = embed(cover, bits, KEY, "random", equal_spread=True)
    assert report.header_bits == header_size(True) and report.capacity_bits is None
    # no initial robustness pass: one classification per used lattice at most
    assert report.compressor_calls <= 3 * 64 + 1
    assert np.array_equal(extract(simulate_channel(stego), KEY, "random", equal_spread=True), bits)


def test_simulate_mode():
    cover = camera()
    stego, report = embed(cover, message(1000, 8), KEY, simulate=True, seed=3)
    assert report.mode == "simulate" and report.total_flips > 0
    again, _ = embed(cover, message(1000, 8), KEY, simulate=True, seed=3)
    assert again == stego


def test_over_capacity():
    cover = camera(64)
    with pytest.raises(PayloadExceedsCapacity):
        embed(cover, message(64 * 64 * 2, 9), KEY)


def test_channel_mismatch_is_reported(monkeypatch):
    cover = camera(64)

    def noisy(stego, channel=None, coder=None):
        coeffs = stego.coeffs.copy()
        coeffs[..., 1:] += 1
        return stego.with_coeffs(coeffs)

    monkeypatch.setattr(pipeline, "simulate_channel", noisy)
    with pytest.raises(ChannelMismatch):
        embed(cover, message(100, 10), KEY)


def test_identity_external_coder(tmp_path, monkeypatch):
    monkeypatch.setenv(pipeline.TMPDIR_ENV, str(tmp_path))
    cover = camera(64)
    channel = ChannelSpec("external", command="cp {in} {out}")
    assert simulate_channel(cover, channel) == cover
    bits = message(150, 11)
    stego, report = embed(cover, bits, KEY, "lowhigh", channel)
    assert np.array_equal(extract(simulate_channel(stego, channel), KEY, "lowhigh", channel), bits)
    # temporary files are removed
    assert list(tmp_path.iterdir()) == []


def test_external_coder_failures():
    cover = camera(32)
    with pytest.raises(ExternalCoderFailure):
        simulate_channel(cover, ChannelSpec("external", command="false {in} {out}"))
    with pytest.raises(ExternalCoderFailure):
        simulate_channel(cover, ChannelSpec("external", command="no-such-coder-xyz {in} {out}"))
    with pytest.raises(ExternalCoderFailure):
        simulate_channel(cover, ChannelSpec("external", command="touch {in} {out}"))
    with pytest.raises(ValueError):
        ExternalCoder("cp a b", cover.table)
    with pytest.raises(ValueError):
        ChannelSpec("external")


def test_raw_lengths_round_trip():
    cover = camera(64)
    sched = make_schedule(cover, KEY, "lowhigh")
    lengths = np.zeros(sched.n_lattices, dtype=np.int64)
    lengths[[1, 2, 5, 9]] = [10, 20, 5, 15]
    bits = message(50, 12)
    stego, _ = embed_raw(cover, bits, KEY, lengths)
    assert np.array_equal(extract(simulate_channel(stego), KEY, lattice_lengths=lengths), bits)
    with pytest.raises(InvalidLength):
        embed_raw(cover, bits, KEY, lengths[:10])
    with pytest.raises(InvalidLength):
        embed_raw(cover, bits[:-1], KEY, lengths)
    with pytest.raises(InvalidLength):
        extract(stego, KEY, lattice_lengths=lengths[:3])


def test_header_codec():
    codes = np.arange(64) % 64
    bits = encode_header(12345, codes)
    assert len(bits) == header_size(False)
    n, back = decode_header(bits, False)
    assert n == 12345 and np.array_equal(back, codes)
    assert decode_header(encode_header(7), True) == (7, None)
    # the checksum is seeded with the placement, so placements cannot be confused
    with pytest.raises(InvalidLength):
        decode_header(encode_header(7, placement=1), True, placement=0)
    flipped = encode_header(7)
    flipped[3] ^= 1
    with pytest.raises(InvalidLength):
        decode_header(flipped, True)
    with pytest.raises(InvalidLength):
        encode_header(1 << 24)


def test_layouts():
    sched = make_schedule(camera(), KEY, "random")
    header = header_layout(sched, header_size(False))
    assert header.sum() == header_size(False)
    per = -(-header_size(False) // 32)
    assert np.count_nonzero(header) <= 32 and header.max() == per
    seg = header_segments(sched, header)
    assert np.all(seg[header > 0] >= 4 * header[header > 0]) and not seg[header == 0].any()
    codes = np.random.default_rng(0).integers(0, 64, 64)
    for n in (0, 1, 999, 5000):
        layout = message_layout(sched, header, n, codes)
        assert layout.sum() == n and np.all(layout >= 0)
        assert np.all(layout + seg <= sched.lattice_sizes())
    # filtered: the header is spread position-major across block classes
    macro = make_schedule(camera(), KEY, "lowhigh", filtered=True)
    used = np.flatnonzero(header_layout(macro, header_size(False)))
    assert len(used) == 18 and np.all(used % 64 <= 1)
    with pytest.raises(PayloadExceedsCapacity):
        header_layout(make_schedule(camera(8), KEY), 10 ** 4)


def test_all_zero_parities_hold_no_header():
    # every coefficient of a mid-gray plane is zero, so every read is all zeros
    flat = compress(np.full((64, 64), 128, dtype=np.uint8), QuantTable.from_qf(75), 75)
    assert not flat.coeffs.any()
    for equal_spread in (False, True):
        with pytest.raises(InvalidLength):
            extract(flat, KEY, equal_spread=equal_spread)


def test_locator_codec():
    positions = np.array([3, 17, 40])
    assert np.array_equal(decode_locator(encode_locator(positions, 5), 5), positions)
    with pytest.raises(InvalidLength):
        decode_locator(encode_locator(positions, 5), 6)
    with pytest.raises(InvalidLength):
        decode_locator(encode_locator([5, 9], 5), 5)


def test_anchor_layout_is_disjoint():
    sched = make_schedule(camera(), KEY, "lowhigh")
    locator, header = anchor_layout(sched, 7, [1, 2, 9], header_size(False))
    assert np.flatnonzero(locator).tolist() == [7]
    assert np.flatnonzero(header).tolist() == [1, 2, 9] and header.sum() == header_size(False)


def test_header_avoids_dead_lattices():
    # stripes leave only a few lattice positions robust, so no fixed
    # placement fits and the header has to be located through an anchor
    cover = compress(corpus()["stripes"], QuantTable.from_qf(75), 75)
    ctx = prepare(cover, KEY, "highlow")
    plan = choose_header_plan(ctx, header_size(False))
    assert plan.anchor is not None
    live = np.array([np.count_nonzero(m.labels != Label.NON_ROBUST) for m in ctx.initial_maps])
    assert np.all(live[np.flatnonzero(plan.counts)] > 0)
    bits = message(200, 14)
    stego, _ = embed(cover, bits, KEY, "highlow", context=ctx)
    assert np.array_equal(extract(simulate_channel(stego), KEY, "highlow"), bits)


def test_report_matches_schema():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads(resources.files("robustjpeg").joinpath("schemas/embed_report.schema.json").read_text())
    _, report = embed(camera(64), message(100, 13), KEY, "highlow")
    data = json.loads(json.dumps(report.to_dict()))
    jsonschema.validate(data, schema)
    assert sum(r["messageBits"] for r in data["lattices"]) == 100
    assert sum(r["headerBits"] for r in data["lattices"]) == data["header_bits"]
