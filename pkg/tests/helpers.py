"""Shared fixtures-by-function for the test modules."""
import numpy as np

import oracles
from robustjpeg.jpeg.core import CoefficientPlane, QuantTable, compress
from robustjpeg.robustness import classify_lattice


def random_small_image(rng, max_blocks=5):
    """Up to ``max_blocks`` x ``max_blocks`` blocks of texture, flats and clipping."""
    by, bx = (int(v) for v in rng.integers(1, max_blocks + 1, 2))
    h, w = 8 * by, 8 * bx
    y, x = np.mgrid[0:h, 0:w]
    kind = int(rng.integers(0, 4))
    if kind == 0:
        img = rng.integers(0, 256, (h, w))
    elif kind == 1:
        img = rng.uniform(150, 320) + rng.uniform(-8, 8) * x + rng.uniform(-8, 8) * y
    elif kind == 2:
        img = rng.uniform(0, 255) + rng.normal(0, rng.uniform(1, 30), (h, w))
    else:
        img = np.where(rng.random((h, w)) < 0.5, 255, rng.integers(200, 256, (h, w)))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def random_small_plane(rng, max_blocks=5, qualities=(50, 75, 85, 92, 95, 100)):
    qf = int(rng.choice(qualities))
    return compress(random_small_image(rng, max_blocks), QuantTable.from_qf(qf), qf)


def random_plane(rng, by=None, bx=None, qf=None):
    by = by or int(rng.integers(1, 6))
    bx = bx or int(rng.integers(1, 6))
    coeffs = np.zeros((by, bx, 64), dtype=np.int32)
    # sparse AC with occasional large values, DC anywhere in range
    mask = rng.random((by, bx, 64)) < rng.uniform(0.05, 0.9)
    coeffs[mask] = rng.integers(-60, 61, mask.sum())
    big = rng.random((by, bx, 64)) < 0.01
    coeffs[big] = rng.integers(-1023, 1024, big.sum())
    coeffs[..., 0] = rng.integers(-1000, 1001, (by, bx))
    table = QuantTable.from_qf(qf or int(rng.integers(1, 101)))
    h = 8 * by - int(rng.integers(0, 8))
    w = 8 * bx - int(rng.integers(0, 8))
    return CoefficientPlane(coeffs, table, w, h)


def oracle_mismatches(coeffs, schedule, coder, lattices=None):
    """Count disagreements between batched and per-coefficient classification."""
    kernel = coder.image_filter.kernel if coder.image_filter is not None else None
    index = schedule.lattice_index()
    bad = 0
    checked = 0
    for lat in (range(schedule.n_lattices) if lattices is None else lattices):
        got = classify_lattice(coeffs, schedule, lat, coder)
        want = oracles.classify(coeffs, coder.table.steps, index, lat, schedule.blocks_x, kernel)
        assert len(want) == len(got)
        for b, n, label, pred in zip(got.blocks, got.modes, got.labels, got.predicted):
            checked += 1
            if want[(int(b), int(n))] != (int(label), int(pred)):
                bad += 1
    return bad, checked


def stc_instance(rng, max_n=30, max_h=4, wet_rate=None):
    """Random small STC problem: ``(params, parity, cost, message)``."""
    from robustjpeg.stc import StcParams

    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, max(2, n // 2) + 1))
    h = int(rng.integers(1, max_h + 1))
    params = StcParams(n, m, seed=int(rng.integers(0, 2**31)), height=h)
    parity = rng.integers(0, 2, n).astype(np.uint8)
    cost = rng.uniform(0.1, 10.0, n)
    if rng.random() < 0.3:
        cost = np.round(cost)  # ties between equal-cost solutions
    wet = rng.random(n) < (rng.uniform(0, 0.5) if wet_rate is None else wet_rate)
    cost[wet] = np.inf
    message = rng.integers(0, 2, m).astype(np.uint8)
    return params, parity, cost, message


def check_stc_instance(params, parity, cost, message):
    """Compare the trellis coder with exhaustive search.

    Returns ``"ok"``, ``"infeasible"`` (both agree there is no solution) or a
    description of the disagreement.
    """
    from robustjpeg.exceptions import EmbeddingInfeasible
    from robustjpeg.stc import stc_encode, stc_extract, stc_matrix

    H = stc_matrix(params)
    best = oracles.min_flip_cost(H, parity, cost, message)
    try:
        flips, total = stc_encode(parity, cost, message, params)
    except EmbeddingInfeasible:
        return "infeasible" if np.isinf(best) else f"coder gave up but optimum is {best}"
    if np.isinf(best):
        return "coder found a solution the oracle says does not exist"
    stego = parity ^ flips.astype(np.uint8)
    if not np.array_equal((H.astype(int) @ stego) % 2, message):
        return "syndrome mismatch (dense matrix)"
    if not np.array_equal(stc_extract(stego, params), message):
        return "syndrome mismatch (extractor)"
    if np.any(flips & np.isinf(cost)):
        return "wet element flipped"
    if abs(total - best) > 1e-9 * max(1.0, best):
        return f"cost {total} != optimum {best}"
    if abs(cost[flips].sum() - total) > 1e-9 * max(1.0, total):
        return "reported cost does not match the flips"
    return "ok"
