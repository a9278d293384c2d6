"""Errorless JPEG steganography that survives recompression.

Quick use::

    from robustjpeg import RobustJpegEmbedder, RobustJpegExtractor
    stego = RobustJpegEmbedder(key="00ff").fit(cover).embed(b"hello")
"""
__version__ = "0.1.0"

from .costs import CostMap, base_costs, capacity, robust_cost_update, solve_change_rates, ternary_entropy
from .estimator import RobustJpegEmbedder, RobustJpegExtractor, RobustnessAnalyzer
from .exceptions import (
    ChannelMismatch,
    EmbeddingInfeasible,
    PayloadExceedsCapacity,
    RobustJpegError,
)
from .jpeg import CoefficientPlane, QuantTable, compress, decompress, parse, read_jpeg, serialize, write_jpeg
from .keys import StegoKey
from .lattices import ScanStrategy, build_macro_schedule, build_schedule
from .pipeline import ChannelSpec, EmbedReport, ExternalCoder, embed, extract, simulate_channel
from .robustness import Label, RobustnessMap, classify_lattice, initial_robust_map
