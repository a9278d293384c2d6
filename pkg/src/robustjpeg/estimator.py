"""scikit-learn style wrappers around the pipeline.

``fit`` does the message-independent work on a cover (schedule, initial
robustness, capacity); ``embed`` then hides a message. The analyzer exposes
per-lattice robustness counts through ``fit``/``transform``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .pipeline import ChannelSpec, embed, extract, prepare, simulate_channel
from .robustness import initial_robust_map
from .validation import check_bits, check_key, check_plane


def _channel(est):
    return ChannelSpec(est.coder, est.image_filter, est.coder_cmd)


class RobustJpegEmbedder(BaseEstimator):
    """Hide messages in a grayscale JPEG so they survive recompression.

    Parameters
    ----------
    key : bytes or hex str
    strategy : {"lowhigh", "highlow", "random"}
    image_filter : None, "gaussian", "sharpen" or a FilterSpec
    coder : "internal" or "external"; ``coder_cmd`` is the command template
        for the latter.
    equal_spread : split the message by lattice size instead of solving for
        the change rates. Skips the initial robustness pass.
    simulate : draw changes at the optimal rates instead of coding; the
        result carries no recoverable message.
    """

    def __init__(self, key=None, strategy="lowhigh", image_filter=None, coder="internal", coder_cmd=None,
                 cost_model="quantstep", equal_spread=False, height=10, simulate=False, seed=0, verify=True):
        self.key = key
        self.strategy = strategy
        self.image_filter = image_filter
        self.coder = coder
        self.coder_cmd = coder_cmd
        self.cost_model = cost_model
        self.equal_spread = equal_spread
        self.height = height
        self.simulate = simulate
        self.seed = seed
        self.verify = verify

    def fit(self, X, y=None):
        plane = check_plane(X)
        key = check_key(self.key)
        self.channel_ = _channel(self)
        self.context_ = prepare(plane, key, self.strategy, self.channel_,
                                equal_spread=self.equal_spread and not self.simulate,
                                cost_model=self.cost_model)
        self.cover_ = plane
        self.schedule_ = self.context_.schedule
        self.capacity_bits_ = self.context_.capacity_bits
        self.n_lattices_ = self.schedule_.n_lattices
        return self

    def embed(self, message):
        check_is_fitted(self, "context_")
        stego, self.report_ = embed(self.cover_, check_bits(message), self.context_.key, self.strategy,
                                    self.channel_, equal_spread=self.equal_spread, cost_model=self.cost_model,
                                    height=self.height, simulate=self.simulate, seed=self.seed,
                                    verify=self.verify, context=self.context_)
        return stego

    def fit_embed(self, X, message):
        return self.fit(X).embed(message)


class RobustJpegExtractor(BaseEstimator):
    """Receiver side. Needs the same key and settings as the embedder."""

    def __init__(self, key=None, strategy="lowhigh", image_filter=None, equal_spread=False, height=10,
                 apply_channel=False, coder="internal", coder_cmd=None):
        self.key = key
        self.strategy = strategy
        self.image_filter = image_filter
        self.equal_spread = equal_spread
        self.height = height
        self.apply_channel = apply_channel
        self.coder = coder
        self.coder_cmd = coder_cmd

    def fit(self, X=None, y=None):
        self.key_ = check_key(self.key)
        self.channel_ = _channel(self)
        return self

    def extract(self, X):
        if not hasattr(self, "key_"):
            self.fit()
        plane = check_plane(X)
        if self.apply_channel:
            plane = simulate_channel(plane, self.channel_)
        return extract(plane, self.key_, self.strategy, self.channel_, equal_spread=self.equal_spread,
                       height=self.height)


class RobustnessAnalyzer(TransformerMixin, BaseEstimator):
    """Per-lattice label counts of the initial robust set.

    ``transform`` maps a list of planes to an array of shape
    ``(n_images, n_lattices, 4)`` holding the counts of the labels Both,
    PlusOnly, MinusOnly and NonRobust.
    """

    def __init__(self, key=None, strategy="lowhigh", image_filter=None):
        self.key = key
        self.strategy = strategy
        self.image_filter = image_filter

    def fit(self, X=None, y=None):
        self.key_ = check_key(self.key if self.key is not None else b"\x00")
        self.channel_ = ChannelSpec(image_filter=self.image_filter)
        self.n_classes_ = 9 if self.channel_.filtered else 1
        return self

    def analyze(self, plane):
        from .pipeline import make_schedule

        check_is_fitted(self, "key_")
        plane = check_plane(plane)
        schedule = make_schedule(plane, self.key_, self.strategy, self.channel_.filtered)
        coder = self.channel_.make_coder(plane)
        return initial_robust_map(plane, schedule, coder)

    def transform(self, X):
        planes = [X] if not isinstance(X, (list, tuple)) else X
        out = []
        for plane in planes:
            maps = self.analyze(plane)
            out.append([[c["nBoth"], c["nPlusOnly"], c["nMinusOnly"], c["nNonRobust"]]
                        for c in (m.counts() for m in maps)])
        return np.asarray(out, dtype=np.int64)

    def robust_fractions(self, X):
        counts = self.transform(X)
        total = counts.sum(axis=2)
        return np.divide(total - counts[..., 3], total, out=np.zeros(total.shape), where=total > 0)
