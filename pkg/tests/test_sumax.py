import numpy as np
import pytest

from scfdma_alloc.channel import ScenarioConfig, generate_channel
from scfdma_alloc.patterns import enumerate_patterns
from scfdma_alloc.sumax import (
    ModulationTable,
    build_sumax,
    pattern_effective_snr,
    select_modulation,
    sum_utility,
    weighted_rate,
)


def test_modulation_table_defaults():
    t = ModulationTable()
    assert t.names == ("QPSK", "16QAM", "64QAM")
    assert t.bits_per_symbol == (2, 4, 6)
    assert t.thresholds == (4.0, 16.0, 64.0)


def test_modulation_table_rejects_non_increasing_thresholds():
    with pytest.raises(ValueError):
        ModulationTable(thresholds=(4.0, 4.0, 64.0))
    with pytest.raises(ValueError):
        ModulationTable(thresholds=(16.0, 4.0, 64.0))


def test_modulation_table_restricted():
    t = ModulationTable()
    r = t.restricted("16QAM")
    assert r.names == ("16QAM",)
    assert r.bits_per_symbol == (4,)
    assert r.thresholds == (16.0,)
    with pytest.raises(ValueError):
        t.restricted("8PSK")


def test_select_modulation_boundaries_inclusive():
    t = ModulationTable()
    assert select_modulation(3.9999, t) is None
    assert select_modulation(4.0, t) == 0
    assert select_modulation(15.9, t) == 0
    assert select_modulation(16.0, t) == 1
    assert select_modulation(63.9, t) == 1
    assert select_modulation(64.0, t) == 2
    assert select_modulation(1e6, t) == 2


def test_pattern_power_split_respects_peak():
    gains = np.array([2.0, 6.0])
    # budget 1 W over two sub-channels would allow 0.5 each; peak also 0.5
    eff = pattern_effective_snr(gains, (1, 2), p_max=1.0, p_peak=0.5)
    assert eff == pytest.approx(5.0 / 3.0, rel=1e-12)
    # low peak binds instead of the budget
    eff2 = pattern_effective_snr(gains, (1, 2), p_max=1.0, p_peak=0.25)
    snrs = 0.25 * gains
    m = np.mean(snrs / (1 + snrs))
    assert eff2 == pytest.approx(m / (1 - m), rel=1e-12)


def test_pattern_power_zf_mode():
    gains = np.array([2.0, 6.0])
    eff = pattern_effective_snr(gains, (1, 2), p_max=1.0, p_peak=0.5, equalizer="zf")
    assert eff == pytest.approx(1.5, rel=1e-12)


def test_weighted_rate_formula():
    assert weighted_rate(2, 3.0) == pytest.approx(4.0, rel=1e-12)
    assert weighted_rate(3, 0.0) == 0.0


def test_build_matches_naive_per_pattern_loop():
    cfg = ScenarioConfig(n_users=3, n_subchannels=5)
    for seed in range(5):
        ch = generate_channel(cfg, seed)
        ps = enumerate_patterns(5)
        weights = np.random.default_rng(seed).uniform(0.5, 1.5, 3)
        inst = build_sumax(ch, cfg, weights=weights, patterns=ps)
        p_max = cfg.per_user("p_max_w")
        p_peak = cfg.per_user("p_peak_w")
        for k in range(3):
            for j, col in enumerate(ps.columns):
                if not col:
                    assert inst.utilities[k, j] == 0.0
                    assert np.isnan(inst.pattern_snr[k, j])
                    continue
                eff = pattern_effective_snr(
                    ch.gains[k], col, p_max[k], p_peak[k], cfg.equalizer
                )
                expected = weights[k] * weighted_rate(len(col), eff)
                assert inst.utilities[k, j] == pytest.approx(expected, rel=1e-10)
                assert inst.pattern_snr[k, j] == pytest.approx(eff, rel=1e-10)


def test_build_default_weights_are_ones():
    cfg = ScenarioConfig(n_users=2, n_subchannels=3)
    ch = generate_channel(cfg, 1)
    inst = build_sumax(ch, cfg)
    assert inst.weights.tolist() == [1.0, 1.0]


def test_utilities_grow_with_weight():
    cfg = ScenarioConfig(n_users=2, n_subchannels=4)
    ch = generate_channel(cfg, 3)
    lo = build_sumax(ch, cfg, weights=[1.0, 1.0])
    hi = build_sumax(ch, cfg, weights=[2.0, 1.0])
    nonempty = slice(1, None)
    assert np.allclose(hi.utilities[0, nonempty], 2.0 * lo.utilities[0, nonempty])
    assert np.array_equal(hi.utilities[1], lo.utilities[1])


def test_sum_utility_matches_manual_sum():
    cfg = ScenarioConfig(n_users=3, n_subchannels=4)
    ch = generate_channel(cfg, 11)
    inst = build_sumax(ch, cfg)
    choice = (2, 0, 5)
    manual = 0.0
    for k, j in enumerate(choice):
        manual = manual + float(inst.utilities[k, j])
    assert sum_utility(inst, choice) == manual


def test_sum_utility_ignores_feasibility():
    cfg = ScenarioConfig(n_users=2, n_subchannels=3)
    ch = generate_channel(cfg, 2)
    inst = build_sumax(ch, cfg)
    # overlapping full patterns are still summable; feasibility is checked elsewhere
    full = inst.patterns.n_patterns - 1
    val = sum_utility(inst, (full, full))
    assert val == pytest.approx(
        float(inst.utilities[0, full] + inst.utilities[1, full]), rel=1e-12
    )


def test_custom_rate_function_is_used():
    cfg = ScenarioConfig(n_users=2, n_subchannels=3)
    ch = generate_channel(cfg, 4)

    def flat_rate(n_sub, snr_eff):
        return np.ones_like(np.asarray(snr_eff, dtype=float))

    inst = build_sumax(ch, cfg, rate_fn=flat_rate)
    nonempty = inst.utilities[:, 1:]
    assert np.allclose(nonempty, 1.0)
