"""Sum-utility maximisation model (sumax) and threshold-based adaptive modulation.

Each user k is scored on every contiguous pattern j: the total power budget is
spread evenly over the pattern (respecting the per-sub-channel peak), the
equaliser's effective SNR is computed, and the utility defaults to the weighted
rate  w_k * |pattern| * log2(1 + snr_eff).  The empty pattern scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import ChannelGains, EmptyPatternError, ScenarioConfig, effective_snr_mmse, effective_snr_zf
from .patterns import PatternSet, enumerate_patterns


@dataclass(frozen=True)
class ModulationTable:
    """Modulation orders with effective-SNR activation thresholds (linear scale).

    Thresholds must be strictly increasing with bits_per_symbol.  The defaults
    are synthetic placeholders (6/12/18 dB); calibrate per deployment.
    """

    names: tuple[str, ...] = ("QPSK", "16QAM", "64QAM")
    bits_per_symbol: tuple[int, ...] = (2, 4, 6)
    thresholds: tuple[float, ...] = (4.0, 16.0, 64.0)

    def __post_init__(self) -> None:
        if not (len(self.names) == len(self.bits_per_symbol) == len(self.thresholds)):
            raise ValueError("names, bits_per_symbol and thresholds must have equal length")
        if len(self.names) == 0:
            raise ValueError("modulation table cannot be empty")
        if any(b <= 0 for b in self.bits_per_symbol):
            raise ValueError("bits_per_symbol must be positive")
        if any(t <= 0 for t in self.thresholds):
            raise ValueError("thresholds must be positive")
        if any(b2 <= b1 for b1, b2 in zip(self.bits_per_symbol, self.bits_per_symbol[1:])):
            raise ValueError("bits_per_symbol must be strictly increasing")
        if any(t2 <= t1 for t1, t2 in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")

    @property
    def n_modulations(self) -> int:
        return len(self.names)

    def restricted(self, name: str) -> "ModulationTable":
        """Single-entry table for fixed-modulation runs."""
        if name not in self.names:
            raise ValueError(f"unknown modulation {name!r}; have {self.names}")
        i = self.names.index(name)
        return ModulationTable(
            names=(self.names[i],),
            bits_per_symbol=(self.bits_per_symbol[i],),
            thresholds=(self.thresholds[i],),
        )


def select_modulation(snr_eff: float, table: ModulationTable) -> int | None:
    """Highest modulation whose threshold is still met; None if even the lowest fails.

    The boundary is inclusive: snr_eff equal to a threshold activates it.
    """
    best = None
    for m, thr in enumerate(table.thresholds):
        if thr <= snr_eff:
            best = m
    return best


def pattern_effective_snr(
    gain_row: np.ndarray,
    pattern: Sequence[int],
    p_max: float,
    p_peak: float,
    equalizer: str = "mmse",
) -> float:
    """Effective SNR of one user on one pattern under even power spreading.

    Per-sub-channel power is min(p_peak, p_max / len(pattern)).  ``pattern``
    holds 1-based sub-channel indices; empty patterns raise EmptyPatternError.
    """
    if len(pattern) == 0:
        raise EmptyPatternError("effective SNR is undefined for the empty pattern")
    idx = np.asarray(pattern, dtype=int) - 1
    power = min(p_peak, p_max / len(pattern))
    snrs = power * np.asarray(gain_row, dtype=float)[idx]
    if equalizer == "mmse":
        return effective_snr_mmse(snrs)
    if equalizer == "zf":
        return effective_snr_zf(snrs)
    raise ValueError(f"unknown equalizer {equalizer!r}")


def weighted_rate(n_subchannels: int, snr_eff: np.ndarray) -> np.ndarray:
    """Default utility shape: pattern size times spectral efficiency."""
    return n_subchannels * np.log2(1.0 + snr_eff)


@dataclass(frozen=True)
class SumaxInstance:
    """Per-(user, pattern) utilities for one channel realisation.

    ``utilities`` and ``pattern_snr`` have shape (K, J); column 0 (empty
    pattern) has utility 0 and NaN SNR as the undefined marker.
    """

    utilities: np.ndarray
    pattern_snr: np.ndarray
    patterns: PatternSet
    weights: np.ndarray
    seed: int | None = None

    @property
    def n_users(self) -> int:
        return self.utilities.shape[0]

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for row in self.utilities:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def build_sumax(
    gains: ChannelGains,
    config: ScenarioConfig,
    weights: Sequence[float] | None = None,
    patterns: PatternSet | None = None,
    rate_fn: Callable[[int, np.ndarray], np.ndarray] = weighted_rate,
) -> SumaxInstance:
    """Score every (user, pattern) pair on one channel realisation.

    ``rate_fn(size, snr_eff)`` is the pluggable utility shape; the per-user
    weight multiplies it.  Utilities are non-negative for non-decreasing
    rate_fn with rate_fn(size, 0) = 0.
    """
    g = gains.gains
    k_users, n_sub = g.shape
    if patterns is None:
        patterns = enumerate_patterns(n_sub)
    if patterns.n_subchannels != n_sub:
        raise ValueError("pattern set does not match the channel's sub-channel count")
    w = np.ones(k_users) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (k_users,):
        raise ValueError(f"weights must have shape ({k_users},)")
    p_max = config.per_user("p_max_w")
    p_peak = config.per_user("p_peak_w")

    n_pat = patterns.n_patterns
    utilities = np.zeros((k_users, n_pat))
    pattern_snr = np.full((k_users, n_pat), np.nan)

    # Columns for a given length are consecutive, so score one length at a time
    # with windowed means over the per-sub-channel SNR transform.
    col = 1
    for length in range(1, n_sub + 1):
        power = np.minimum(p_peak, p_max / length)
        snr = power[:, None] * g
        if config.equalizer == "mmse":
            t = snr / (1.0 + snr)
        else:
            t = 1.0 / snr
        csum = np.concatenate([np.zeros((k_users, 1)), np.cumsum(t, axis=1)], axis=1)
        mean = (csum[:, length:] - csum[:, :-length]) / length
        if config.equalizer == "mmse":
            gamma = mean / (1.0 - mean)
        else:
            gamma = 1.0 / mean
        n_starts = n_sub - length + 1
        pattern_snr[:, col : col + n_starts] = gamma
        utilities[:, col : col + n_starts] = w[:, None] * rate_fn(length, gamma)
        col += n_starts
    return SumaxInstance(
        utilities=utilities,
        pattern_snr=pattern_snr,
        patterns=patterns,
        weights=w,
        seed=gains.seed,
    )


def sum_utility(instance: SumaxInstance, pattern_choice: Sequence[int]) -> float:
    """Total utility of one pattern index per user; no feasibility checking here."""
    if len(pattern_choice) != instance.n_users:
        raise ValueError("need exactly one pattern index per user")
    total = 0.0
    for k, j in enumerate(pattern_choice):
        total += float(instance.utilities[k, j])
    return total
