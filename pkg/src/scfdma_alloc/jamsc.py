"""Joint adaptive-modulation / sum-cost minimisation model (jamsc).

For every allowed (user, modulation, pattern) option the transmit power is set
so the pattern's effective MMSE SNR exactly meets the modulation's activation
threshold, and the option cost is -exp(p_max - p): cheapest when the power
headroom is largest.  Options whose pattern is too short to carry the user's
target rate are masked out entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelGains, EmptyPatternError, ScenarioConfig
from .patterns import FeasibilityMask, PatternSet, build_feasibility_mask, enumerate_patterns
from .sumax import ModulationTable

# Ceiling guard: keeps exact rate/capacity matches from rounding up on fp dust.
_CEIL_GUARD = 1e-9


class PowerSolveError(RuntimeError):
    """The target-SNR power equation could not be bracketed or solved."""


@dataclass(frozen=True)
class FrameConfig:
    """Frame timing used to convert a bit rate into a sub-channel count."""

    tti_s: float = 0.5e-3
    symbols_per_subchannel: int = 12

    def __post_init__(self) -> None:
        if self.tti_s <= 0:
            raise ValueError("tti_s must be positive")
        if self.symbols_per_subchannel < 1:
            raise ValueError("symbols_per_subchannel must be >= 1")


def min_subchannels(target_rate_bps: float, bits_per_symbol: int, frame: FrameConfig) -> int:
    """Fewest sub-channels that carry ``target_rate_bps`` in one TTI.

    ceil(rate * tti / (bits_per_symbol * symbols_per_subchannel)), at least 1.
    """
    if target_rate_bps <= 0:
        raise ValueError("target_rate_bps must be positive")
    if bits_per_symbol <= 0:
        raise ValueError("bits_per_symbol must be positive")
    bits_needed = target_rate_bps * frame.tti_s
    bits_per_pattern_unit = bits_per_symbol * frame.symbols_per_subchannel
    return max(1, math.ceil(bits_needed / bits_per_pattern_unit - _CEIL_GUARD))


def min_count_matrix(
    targets_bps: Sequence[float], table: ModulationTable, frame: FrameConfig
) -> np.ndarray:
    """(K, M) matrix of minimum sub-channel counts for each user and modulation."""
    return np.array(
        [[min_subchannels(r, b, frame) for b in table.bits_per_symbol] for r in targets_bps],
        dtype=np.int64,
    )


def _solve_powers_vec(gains_padded: np.ndarray, sizes: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Vector bisection for the per-option target-SNR powers.

    Row t of ``gains_padded`` holds the pattern's gains padded with zeros.
    Solves sum_n p*g / (size + p*g) = size * thr / (1 + thr) for p > 0; the
    left side grows monotonically from 0 to the pattern size, so a unique
    positive root always exists.
    """
    sizes = np.asarray(sizes, dtype=float)
    target = sizes * thresholds / (1.0 + thresholds)

    def lhs(p):
        pg = p[:, None] * gains_padded
        return np.sum(pg / (sizes[:, None] + pg), axis=1)

    hi = np.ones(len(sizes))
    for _ in range(200):
        short = lhs(hi) < target
        if not short.any():
            break
        hi = np.where(short, hi * 2.0, hi)
    else:
        raise PowerSolveError("failed to bracket the target-SNR power")
    lo = np.zeros(len(sizes))
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        below = lhs(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def solve_pattern_power(pattern_gains: Sequence[float], threshold: float) -> float:
    """Power that makes the pattern's effective MMSE SNR equal the threshold.

    ``pattern_gains`` holds the normalised gains of the pattern's sub-channels.
    Bisection with a doubling upper bracket; the residual of the defining
    equation is driven below 1e-10 in relative terms.
    """
    g = np.asarray(pattern_gains, dtype=float)
    if g.size == 0:
        raise EmptyPatternError("cannot solve power for an empty pattern")
    if (g <= 0).any() or not np.isfinite(g).all():
        raise ValueError("pattern gains must be finite and > 0")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return float(_solve_powers_vec(g[None, :], np.array([g.size]), np.array([float(threshold)]))[0])


def cost(p_max: float, power: float) -> float:
    """Option cost -exp(p_max - power); more headroom means lower cost."""
    return -math.exp(p_max - power)


@dataclass(frozen=True)
class JamscInstance:
    """Per-(user, modulation, pattern) powers and costs for one realisation.

    ``powers`` and ``costs`` have shape (K, M, J) and are NaN wherever
    ``mask.allowed`` is False; masked options carry no usable numbers.
    """

    costs: np.ndarray
    powers: np.ndarray
    mask: FeasibilityMask
    patterns: PatternSet
    table: ModulationTable
    targets_bps: np.ndarray
    p_max: np.ndarray
    infeasible_users: tuple[int, ...]
    seed: int | None = None

    @property
    def n_users(self) -> int:
        return self.costs.shape[0]


def build_jamsc(
    gains: ChannelGains,
    config: ScenarioConfig,
    targets_bps: Sequence[float],
    table: ModulationTable,
    frame: FrameConfig = FrameConfig(),
    patterns: PatternSet | None = None,
    strict_cap: bool = False,
) -> JamscInstance:
    """Build the jamsc option tables for one channel realisation.

    With ``strict_cap`` options whose solved power exceeds the user's budget
    are masked out; by default they stay allowed and simply price in as very
    costly.  Users left with no option at all are listed in
    ``infeasible_users`` rather than raising here.
    """
    g = gains.gains
    k_users, n_sub = g.shape
    if patterns is None:
        patterns = enumerate_patterns(n_sub)
    if patterns.n_subchannels != n_sub:
        raise ValueError("pattern set does not match the channel's sub-channel count")
    targets = np.asarray(targets_bps, dtype=float)
    if targets.shape != (k_users,):
        raise ValueError(f"targets_bps must have shape ({k_users},)")
    p_max = config.per_user("p_max_w")

    mins = min_count_matrix(targets, table, frame)
    mask = build_feasibility_mask(patterns, mins)
    allowed = mask.allowed.copy()

    k_idx, m_idx, j_idx = np.nonzero(allowed)
    n_pat = patterns.n_patterns
    powers = np.full((k_users, table.n_modulations, n_pat), np.nan)
    costs = np.full((k_users, table.n_modulations, n_pat), np.nan)
    if len(k_idx):
        sizes = patterns.sizes[j_idx]
        max_size = int(sizes.max())
        padded = np.zeros((len(k_idx), max_size))
        for t, (k, j) in enumerate(zip(k_idx, j_idx)):
            col = patterns.columns[j]
            padded[t, : len(col)] = g[k, col[0] - 1 : col[0] - 1 + len(col)]
        thr = np.asarray(table.thresholds, dtype=float)[m_idx]
        p = _solve_powers_vec(padded, sizes, thr)
        powers[k_idx, m_idx, j_idx] = p
        costs[k_idx, m_idx, j_idx] = -np.exp(p_max[k_idx] - p)
        if strict_cap:
            over = p > p_max[k_idx]
            allowed[k_idx[over], m_idx[over], j_idx[over]] = False
            powers[k_idx[over], m_idx[over], j_idx[over]] = np.nan
            costs[k_idx[over], m_idx[over], j_idx[over]] = np.nan
            mask = FeasibilityMask(allowed=allowed, min_counts=mask.min_counts)

    infeasible = tuple(mask.users_without_options())
    return JamscInstance(
        costs=costs,
        powers=powers,
        mask=mask,
        patterns=patterns,
        table=table,
        targets_bps=targets,
        p_max=p_max,
        infeasible_users=infeasible,
        seed=gains.seed,
    )


def sum_cost(instance: JamscInstance, choices: Sequence[tuple[int, int]]) -> float:
    """Total cost of one (modulation, pattern) choice per user.

    Raises ValueError when a chosen option is masked; masked entries never
    contribute a numeric cost.
    """
    if len(choices) != instance.n_users:
        raise ValueError("need exactly one (modulation, pattern) choice per user")
    total = 0.0
    for k, (m, j) in enumerate(choices):
        if not instance.mask.allowed[k, m, j]:
            raise ValueError(f"choice (user={k}, modulation={m}, pattern={j}) is masked")
        total += float(instance.costs[k, m, j])
    return total
