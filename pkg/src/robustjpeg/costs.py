"""Embedding costs, the robust cost update, optimal change rates and payload spreading."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .exceptions import InvalidRates, PayloadExceedsCapacity, SolverNoConverge, UnknownCostModel
from .robustness import Label, RobustnessMap

#: Cost of a forbidden change. ``exp(-lam * WET)`` is exactly 0 for any lam > 0.
WET = math.inf
LOG2_3 = math.log2(3)


@dataclass
class CostMap:
    """Costs of +1 and -1 changes, either per plane position or per lattice member."""

    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        self.plus = np.asarray(self.plus, dtype=np.float64)
        self.minus = np.asarray(self.minus, dtype=np.float64)
        if self.plus.shape != self.minus.shape:
            raise ValueError("plus and minus costs must have the same shape")
        if np.any(np.isnan(self.plus)) or np.any(np.isnan(self.minus)):
            raise ValueError("costs must not be NaN")
        if np.any(self.plus < 0) or np.any(self.minus < 0):
            raise ValueError("costs must be non-negative")

    @property
    def shape(self):
        return self.plus.shape

    def copy(self):
        return CostMap(self.plus.copy(), self.minus.copy())

    def take(self, blocks, modes):
        """Costs of the given (block, mode) positions as a 1-D map."""
        plus = self.plus.reshape(-1, 64)
        minus = self.minus.reshape(-1, 64)
        return CostMap(plus[blocks, modes], minus[blocks, modes])

    def live(self):
        return np.isfinite(self.plus) | np.isfinite(self.minus)


COST_MODELS: dict[str, Callable] = {}


def register_cost_model(name):
    """Register ``fn(plane) -> CostMap`` under ``name``."""
    def deco(fn):
        COST_MODELS[name.lower()] = fn
        return fn
    return deco


@register_cost_model("quantstep")
def quantstep_costs(plane):
    """Cost of either change equals the quantization step of the mode."""
    rho = np.broadcast_to(plane.table.steps.astype(np.float64), plane.coeffs.shape).copy()
    return CostMap(rho, rho.copy())


@register_cost_model("uniform")
def uniform_costs(plane):
    rho = np.ones(plane.coeffs.shape)
    return CostMap(rho, rho.copy())


def base_costs(cover, model="quantstep") -> CostMap:
    if callable(model):
        return model(cover)
    try:
        fn = COST_MODELS[str(model).lower()]
    except KeyError:
        raise UnknownCostModel(f"unknown cost model {model!r}; registered: {sorted(COST_MODELS)}") from None
    return fn(cover)


def robust_cost_update(costs: CostMap, robust) -> CostMap:
    """Make changes that would not survive recompression wet.

    ``robust`` is one :class:`RobustnessMap` or an iterable of them. ``costs``
    is either aligned with a single map (1-D) or covers the whole plane, in
    which case only the positions of the maps are touched.
    """
    maps = [robust] if isinstance(robust, RobustnessMap) else list(robust)
    out = costs.copy()
    per_member = out.plus.ndim == 1 and len(maps) == 1 and len(out.plus) == len(maps[0])
    for m in maps:
        no_minus = (m.labels == Label.PLUS_ONLY) | (m.labels == Label.NON_ROBUST)
        no_plus = (m.labels == Label.MINUS_ONLY) | (m.labels == Label.NON_ROBUST)
        if per_member:
            out.plus[no_plus] = WET
            out.minus[no_minus] = WET
        else:
            plus = out.plus.reshape(-1, 64)
            minus = out.minus.reshape(-1, 64)
            plus[m.blocks[no_plus], m.modes[no_plus]] = WET
            minus[m.blocks[no_minus], m.modes[no_minus]] = WET
    return out


def ternary_entropy(beta_plus, beta_minus):
    """Entropy in bits of the distribution (1 - b+ - b-, b+, b-)."""
    bp = np.asarray(beta_plus, dtype=np.float64)
    bm = np.asarray(beta_minus, dtype=np.float64)
    stay = 1.0 - bp - bm
    if np.any(bp < 0) or np.any(bm < 0) or np.any(stay < -1e-12):
        raise InvalidRates("change rates must be non-negative and sum to at most 1")
    stay = np.maximum(stay, 0.0)
    h = -(xlogy(stay, stay) + xlogy(bp, bp) + xlogy(bm, bm)) / math.log(2)
    return float(h) if h.ndim == 0 else h


def capacity(costs: CostMap) -> float:
    """log2(3) bits per coefficient with both changes live, 1 with one, 0 with none."""
    live = np.isfinite(costs.plus).astype(int) + np.isfinite(costs.minus).astype(int)
    return float(np.sum(live == 2) * LOG2_3 + np.sum(live == 1))


def map_capacity(robust: RobustnessMap) -> float:
    """Capacity of one lattice given its robustness labels."""
    tally = np.bincount(robust.labels, minlength=4)
    return float(tally[Label.BOTH] * LOG2_3 + tally[Label.PLUS_ONLY] + tally[Label.MINUS_ONLY])


@dataclass
class ChangeRateMap:
    plus: np.ndarray
    minus: np.ndarray
    lam: float

    def entropy(self):
        return ternary_entropy(self.plus, self.minus)

    def total_entropy(self):
        return float(np.sum(self.entropy()))


def change_rates(costs: CostMap, lam):
    """Gibbs change rates for multiplier ``lam``; wet directions get exactly 0."""
    with np.errstate(over="ignore", invalid="ignore"):
        wp = np.where(np.isfinite(costs.plus), np.exp(-lam * costs.plus), 0.0)
        wm = np.where(np.isfinite(costs.minus), np.exp(-lam * costs.minus), 0.0)
    z = 1.0 + wp + wm
    return wp / z, wm / z


def _total_entropy(costs, lam):
    bp, bm = change_rates(costs, lam)
    return float(np.sum(ternary_entropy(bp, bm)))


def solve_change_rates(costs: CostMap, target_bits, rtol=1e-10, max_iter=200) -> ChangeRateMap:
    """Find the multiplier whose change rates carry ``target_bits`` of entropy."""
    target = float(target_bits)
    if target < 0:
        raise ValueError("target payload must be non-negative")
    cap = capacity(costs)
    zeros = np.zeros(costs.shape)
    if target == 0:
        return ChangeRateMap(zeros, zeros.copy(), math.inf)
    if target > cap * (1 + 1e-12) or cap == 0:
        raise PayloadExceedsCapacity(target, cap)
    if target >= cap * (1 - 1e-12):
        bp, bm = change_rates(costs, 0.0)
        return ChangeRateMap(bp, bm, 0.0)

    # Only coefficients with a live direction carry entropy.
    live = costs.live()
    sub = CostMap(costs.plus[live], costs.minus[live])

    def rates_at(lam):
        bp, bm = np.zeros(costs.shape), np.zeros(costs.shape)
        bp[live], bm[live] = change_rates(sub, lam)
        return ChangeRateMap(bp, bm, lam)

    # Entropy decreases monotonically in lam; bisect on log(lam).
    lo, hi = math.log(1e-12), math.log(1e12)
    while _total_entropy(sub, math.exp(lo)) < target:
        lo -= 10.0
        if lo < -700:
            raise SolverNoConverge("could not bracket the Lagrange multiplier from below")
    while _total_entropy(sub, math.exp(hi)) > target:
        hi += 10.0
        if hi > 700:
            raise SolverNoConverge("could not bracket the Lagrange multiplier from above")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        lam = math.exp(mid)
        h = _total_entropy(sub, lam)
        if abs(h - target) <= rtol * target:
            return rates_at(lam)
        if h > target:
            lo = mid
        else:
            hi = mid
    raise SolverNoConverge(f"bisection did not reach {target} bits within {max_iter} iterations")


@dataclass
class PayloadPlan:
    alpha: np.ndarray
    total_bits: float
    unit: str = "bits"
    rates: ChangeRateMap | None = None

    @property
    def n_lattices(self):
        return len(self.alpha)


def payload_bits(cover, amount, unit="bits") -> int:
    """Convert a payload in ``bits`` or ``bpnzac`` to a bit count."""
    unit = unit.lower()
    if unit == "bits":
        return int(amount)
    if unit == "bpnzac":
        return int(math.floor(amount * cover.nonzero_ac()))
    raise ValueError(f"unknown payload unit {unit!r}")


def spread_payload(cover, schedule, initial_maps, total_bits, *, costs=None, model="quantstep",
                   equal_spread=False, unit="bits") -> PayloadPlan:
    """Share of the payload carried by each lattice.

    By default the whole image is solved once on the initial robust set and
    each lattice receives the entropy mass of its members. With
    ``equal_spread`` the shares follow the lattice live capacity when maps are
    given, or the lattice sizes otherwise.
    """
    n = schedule.n_lattices
    total = float(total_bits)
    if total == 0:
        return PayloadPlan(np.zeros(n), 0.0, unit)
    if equal_spread:
        if initial_maps is not None:
            weights = np.array([map_capacity(m) for m in initial_maps])
            if total > weights.sum():
                raise PayloadExceedsCapacity(total, weights.sum())
        else:
            weights = schedule.lattice_sizes().astype(np.float64)
        return PayloadPlan(total * weights / weights.sum(), total, unit)

    if costs is None:
        costs = base_costs(cover, model)
    robust = robust_cost_update(costs, initial_maps)
    flat = CostMap(robust.plus.reshape(-1), robust.minus.reshape(-1))
    rates = solve_change_rates(flat, total)
    h = ternary_entropy(rates.plus, rates.minus)
    alpha = np.bincount(schedule.lattice_index().reshape(-1), weights=h, minlength=n)
    return PayloadPlan(alpha, total, unit, rates)
