import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from robustjpeg import RobustJpegEmbedder, RobustJpegExtractor, RobustnessAnalyzer
from robustjpeg.jpeg import QuantTable, compress, serialize
from robustjpeg.pipeline import simulate_channel


def cover(size=64, qf=75):
    from skimage import data

    return compress(data.camera()[200:200 + size, 200:200 + size], QuantTable.from_qf(qf), qf)


def test_embed_extract_round_trip():
    plane = cover()
    emb = RobustJpegEmbedder(key="c0ffee", strategy="random").fit(plane)
    assert emb.n_lattices_ == 64 and emb.capacity_bits_ > 0
    stego = emb.embed(b"hello there")
    assert emb.report_.success
    ext = RobustJpegExtractor(key="c0ffee", strategy="random", apply_channel=True)
    assert np.packbits(ext.extract(stego)).tobytes() == b"hello there"
    # the received plane works without applying the channel again
    received = simulate_channel(stego)
    assert np.packbits(RobustJpegExtractor(key="c0ffee", strategy="random").extract(received)).tobytes() \
        == b"hello there"


def test_accepts_jpeg_bytes_and_paths(tmp_path):
    plane = cover()
    path = tmp_path / "c.jpg"
    path.write_bytes(serialize(plane))
    a = RobustJpegEmbedder(key="01").fit(serialize(plane))
    b = RobustJpegEmbedder(key="01").fit(str(path))
    assert a.cover_ == b.cover_ == plane
    with pytest.raises(TypeError):
        RobustJpegEmbedder(key="01").fit(np.zeros((8, 8)))


def test_fit_embed_and_context_reuse():
    plane = cover()
    emb = RobustJpegEmbedder(key="01")
    first = emb.fit_embed(plane, b"abc")
    calls = emb.report_.compressor_calls
    second = emb.embed(b"abd")
    # the initial robustness pass is not repeated for the second message
    assert emb.report_.compressor_calls - calls <= 3 * 64 + 1
    assert first != second


def test_params_and_clone():
    emb = RobustJpegEmbedder(key="ab", strategy="highlow", image_filter="gaussian", height=7)
    params = emb.get_params()
    assert params["strategy"] == "highlow" and params["height"] == 7
    twin = clone(emb)
    assert twin.get_params() == params and not hasattr(twin, "context_")
    emb.set_params(strategy="lowhigh")
    assert emb.strategy == "lowhigh"


def test_not_fitted_and_missing_key():
    with pytest.raises(NotFittedError):
        RobustJpegEmbedder(key="01").embed(b"x")
    with pytest.raises(ValueError):
        RobustJpegEmbedder().fit(cover())
    with pytest.raises(NotFittedError):
        RobustnessAnalyzer().analyze(cover())


def test_simulate_embedder():
    emb = RobustJpegEmbedder(key="01", simulate=True, seed=5).fit(cover())
    stego = emb.embed(np.ones(300, dtype=np.uint8))
    assert emb.report_.mode == "simulate" and stego != emb.cover_


def test_analyzer_counts():
    flat = compress(np.full((32, 32), 100, dtype=np.uint8), QuantTable.from_qf(50), 50)
    an = RobustnessAnalyzer(key="01").fit()
    counts = an.transform([flat, cover(32)])
    assert counts.shape == (2, 64, 4)
    assert np.all(counts.sum(axis=2) == 16)
    assert np.all(an.robust_fractions(flat) == 1.0)
    filtered = RobustnessAnalyzer(image_filter="gaussian").fit()
    assert filtered.n_classes_ == 9
    assert filtered.transform(flat).shape == (1, 576, 4)
