import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import single_segment_configs
from s2attn.analysis import (
    block_pair_flops,
    cache_fraction_estimate,
    equivalent_context_length,
    exact_flops,
    flops_reduction,
    kv_reduction,
    simulate_decode_cache,
    speedup_upper_bound,
)
from s2attn.config import LayerSchedule, PatternConfig, dense_config, sliding_window_config, strided_config
from s2attn.pattern import build_kv_masks
from s2attn.verify import check_kv_cache_efficiency


def test_equivalent_context_values():
    assert equivalent_context_length(8192, 64, 16) == 572
    assert equivalent_context_length(8192, 64, 64) == 191
    assert round(flops_reduction(8192, 64, 16), 2) == 14.32
    assert round(flops_reduction(8192, 64, 64), 2) == 42.89
    assert equivalent_context_length(8192, 64, 1) == 8192
    assert flops_reduction(8192, 64, 1) == 1.0


@pytest.mark.parametrize("N, L, v", [(100, 101, 2), (100, 0, 2), (100, 10, 0.5)])
def test_equivalent_context_errors(N, L, v):
    with pytest.raises(ValueError):
        equivalent_context_length(N, L, v)


def test_speedup_upper_bound():
    assert round(speedup_upper_bound(64, 8192, 64), 2) == 42.89
    assert speedup_upper_bound(1, 8192, 64) == 1.0
    values = [speedup_upper_bound(h, 8192, 64) for h in (2, 4, 8, 16, 32, 64)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_exact_flops_dense_is_one():
    report = exact_flops(dense_config(1024, 64, 4), 64)
    assert report.reduction_factor == 1.0
    assert report.equivalent_context == 1024


def test_exact_flops_near_analytic():
    report = exact_flops(strided_config(8192, 64, 16, 1, 16), 64)
    assert round(report.analytic_reduction, 2) == 14.32
    assert abs(report.reduction_factor / report.analytic_reduction - 1) <= 0.10
    assert report.reduction_factor == report.dense_flops / report.sparse_flops


def test_block_flops_linear():
    assert block_pair_flops(100, 64, 64) == 2 * block_pair_flops(50, 64, 64)
    assert block_pair_flops(1, 64, 64) == 4 * 64 * 64 * 64


def test_exact_flops_gap_shrinks_with_length():
    gaps = []
    for nb in (16, 32, 64, 128, 256, 512):
        r = exact_flops(strided_config(nb * 64, 64, 16, 1, 16), 64)
        gaps.append(abs(r.reduction_factor / r.analytic_reduction - 1))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def _remote_blocks_on_stripe(last_block, local, stride, offset):
    # blocks j with last_block - j >= local and j = offset + n * stride
    return len(range(offset, last_block - local + 1, stride))


def test_kv_reduction_table_s2_l1v15():
    # hand count at the final query block (127): local block plus each head's stripe blocks
    per_head = [1 + _remote_blocks_on_stripe(127, 1, 15, h % 15) for h in range(16)]
    frac = sum(per_head) / 16 / 128
    assert sum(per_head) == 152
    cfg = strided_config(8192, 64, 16, 1, 15)
    assert kv_reduction(LayerSchedule(24, cfg)) == pytest.approx(100 * (1 - frac))
    assert kv_reduction(LayerSchedule(24, cfg, {0, 1})) == pytest.approx(100 * (1 - (22 * frac + 2) / 24))


def test_kv_reduction_table_s2_l8v15():
    cfg = strided_config(8192, 64, 16, 8, 15)
    assert kv_reduction(LayerSchedule(24, cfg)) == pytest.approx(87.5)
    assert kv_reduction(LayerSchedule(24, cfg, {0, 1})) == pytest.approx(100 * (1 - (22 * 0.125 + 2) / 24))


def test_kv_reduction_all_dense_zero():
    cfg = strided_config(1024, 64, 4, 1, 4)
    assert kv_reduction(LayerSchedule(6, cfg, set(range(6)))) == 0.0


def test_kv_reduction_linear_in_dense_layers():
    cfg = strided_config(2048, 64, 8, 2, 8)
    single = kv_reduction(LayerSchedule(1, cfg))
    for k in range(0, 7):
        expected = (12 - k) / 12 * single
        assert kv_reduction(LayerSchedule(12, cfg, set(range(k)))) == pytest.approx(expected)


def test_dense_occupancy_grows_by_one():
    trace = simulate_decode_cache(dense_config(300, 16, 2))
    assert np.array_equal(trace.occupancy[0], np.arange(1, 301))
    assert (trace.evict_after == trace.evict_after.shape[1] - 1).all()
    assert trace.peak_tokens[0] == 300


def test_sliding_window_steady_state():
    trace = simulate_decode_cache(sliding_window_config(8192, 64, 16, 9))
    assert (trace.final_tokens == 576).all()
    assert trace.occupancy[:, 9 * 64 - 1:].max() <= 576
    assert (trace.dead_blocks == 0).all()


def test_s2_steady_state_occupancy():
    trace = simulate_decode_cache(strided_config(8192, 64, 16, 1, 15))
    target = 1 + math.ceil(127 / 15)
    blocks = trace.final_tokens / 64
    assert np.all(np.abs(blocks - target) <= 1)
    fraction = trace.final_tokens.mean() / 8192
    assert 0.073 <= fraction <= 0.075


def test_cache_fraction_roughly_inverse_stride():
    cfg = strided_config(65536, 64, 16, 1, 16)
    measured = simulate_decode_cache(cfg).final_tokens.mean() / cfg.seq_len
    assert measured == pytest.approx(cache_fraction_estimate(65536, 64, 16), rel=0.02)
    assert measured == pytest.approx(1 / 16, rel=0.05)


def test_local_stride_two_has_dead_storage():
    cfg = strided_config(32, 1, 4, 3, 3, local_stride=2)
    trace = simulate_decode_cache(cfg)
    assert trace.dead_blocks.sum() > 0


def test_total_tokens_bound():
    cfg = strided_config(64, 8, 2, 1, 2)
    with pytest.raises(ValueError):
        simulate_decode_cache(cfg, 65)
    assert simulate_decode_cache(cfg, 20).occupancy.shape == (2, 20)


def test_gqa_simulates_per_kv_head():
    cfg = strided_config(512, 16, 8, 1, 2, num_kv_heads=2)
    assert simulate_decode_cache(cfg).occupancy.shape == (2, 512)


@settings(max_examples=80, deadline=None)
@given(single_segment_configs())
def test_efficient_masks_have_no_dead_storage(cfg):
    trace = simulate_decode_cache(cfg)
    for unit, mask in enumerate(build_kv_masks(cfg)):
        assert check_kv_cache_efficiency(mask)[0]
        assert (trace.dead_blocks[unit] == 0).all()
        for b in range(cfg.num_blocks):
            assert trace.retained_set(unit, b) == mask.row(b)
        assert (trace.evict_after[unit] >= np.arange(cfg.num_blocks)).all()


@settings(max_examples=60, deadline=None)
@given(single_segment_configs())
def test_occupancy_matches_block_count(cfg):
    trace = simulate_decode_cache(cfg)
    S = cfg.block_size
    for t in range(0, cfg.seq_len, max(1, cfg.seq_len // 7)):
        b = t // S
        for unit in range(trace.occupancy.shape[0]):
            blocks = trace.retained_set(unit, b)
            expect = sum(min(S, t + 1 - j * S) for j in blocks)
            assert trace.occupancy[unit, t] == expect
