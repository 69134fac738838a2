"""Sparsifier masks, the stochastic quantizer and bit accounting."""

import numpy as np
import pytest
from scipy import stats

from sparsecomm.compression import (
    QuantizerConfig,
    SparsityMask,
    apply_mask,
    count_bits_sparse,
    draw_mask,
    draw_step_masks,
    mask_rng,
    match_bit_budget,
    quantize,
)


def test_full_budget_mask_keeps_everything():
    rng = np.random.default_rng(0)
    mask = draw_mask(6, 6, rng)
    assert mask.kept == tuple(range(6))


def test_mask_is_deterministic_under_fixed_stream():
    a = draw_mask(2, 1, mask_rng(5, 3, 1, "state"))
    b = draw_mask(2, 1, mask_rng(5, 3, 1, "state"))
    assert a.kept == b.kept


def test_invalid_budgets_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        draw_mask(4, 0, rng)
    with pytest.raises(ValueError):
        draw_mask(4, 5, rng)


def test_mask_marginals_match_budget_fraction():
    """Each index is kept with frequency k/d, checked over 40000 draws."""
    rng = np.random.default_rng(123)
    counts = np.zeros(4)
    draws = 40_000
    for _ in range(draws):
        counts[list(draw_mask(4, 1, rng).kept)] += 1
    np.testing.assert_allclose(counts / draws, 0.25, atol=0.01)


def test_mask_index_frequencies_pass_uniformity_test():
    rng = np.random.default_rng(7)
    d, k, draws = 8, 2, 100_000
    counts = np.zeros(d)
    for _ in range(draws):
        counts[list(draw_mask(d, k, rng).kept)] += 1
    # expected count per index is draws * k / d under uniform inclusion
    result = stats.chisquare(counts, f_exp=np.full(d, draws * k / d))
    assert result.pvalue > 0.01


def test_step_masks_differ_between_state_and_surplus_streams():
    state, surplus = draw_step_masks(seed=1, t=0, n=6, d=16, k=4)
    assert len(state) == len(surplus) == 6
    assert any(s.kept != y.kept for s, y in zip(state, surplus))


def test_apply_mask_selects_exact_entries():
    mask = SparsityMask(d=3, kept=(0, 2))
    np.testing.assert_array_equal(apply_mask(np.array([1.0, 2.0, 3.0]), mask), [1.0, 0.0, 3.0])


def test_apply_mask_is_idempotent():
    rng = np.random.default_rng(2)
    v = rng.standard_normal(9)
    mask = draw_mask(9, 3, rng)
    once = apply_mask(v, mask)
    np.testing.assert_array_equal(apply_mask(once, mask), once)


def test_masked_vector_mean_is_scaled_down():
    """Averaging over random masks shrinks the vector by k/d, so the
    sparsifier is biased.  The Monte Carlo mean must sit within three
    standard errors of (k/d) v on every coordinate."""
    rng = np.random.default_rng(3)
    d, k, draws = 6, 2, 40_000
    v = rng.standard_normal(d)
    total = np.zeros(d)
    total_sq = np.zeros(d)
    for _ in range(draws):
        dense = apply_mask(v, draw_mask(d, k, rng))
        total += dense
        total_sq += dense * dense
    mean = total / draws
    se = np.sqrt((total_sq / draws - mean**2) / draws)
    assert (np.abs(mean - (k / d) * v) <= 3 * se + 1e-12).all()


def test_quantizer_is_exact_on_lattice_points():
    # (3, 4) has norm 5, so both scaled magnitudes land exactly on levels of s=5
    rng = np.random.default_rng(0)
    out = quantize(np.array([3.0, 4.0]), QuantizerConfig(levels=5), rng)
    np.testing.assert_allclose(out, [3.0, 4.0], atol=1e-12)


def test_quantizer_maps_zero_to_zero():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(quantize(np.zeros(4), QuantizerConfig(levels=3), rng), np.zeros(4))


def test_quantizer_output_lies_on_the_norm_lattice():
    rng = np.random.default_rng(11)
    v = rng.standard_normal(16)
    s = 6
    out = quantize(v, QuantizerConfig(levels=s), rng)
    norm = np.linalg.norm(v)
    levels = np.abs(out) * s / norm
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)
    assert (levels <= s + 1e-9).all()


def test_quantizer_monte_carlo_mean_is_unbiased():
    rng = np.random.default_rng(17)
    v = rng.standard_normal(8)
    cfg = QuantizerConfig(levels=4)
    draws = 20_000
    total = np.zeros(8)
    total_sq = np.zeros(8)
    for _ in range(draws):
        q = quantize(v, cfg, rng)
        total += q
        total_sq += q * q
    mean = total / draws
    se = np.sqrt((total_sq / draws - mean**2) / draws)
    assert (np.abs(mean - v) <= 3 * se + 1e-12).all()


def test_bit_match_published_small_budget_settings():
    # frozen from the budget identity 64*q*d = (log2(s) + 1)*d + 32
    assert match_bit_budget(0.09, 128).levels == 22
    assert match_bit_budget(0.07, 64).levels == 7


def test_bit_match_full_budget_is_huge():
    match = match_bit_budget(1.0, 32)
    assert match.exponent == 62.0
    assert match.levels == 2**62


def test_bit_match_rejects_budgets_below_the_header():
    with pytest.raises(ValueError):
        match_bit_budget(0.01, 16)


def test_sparse_bit_counts():
    assert count_bits_sparse(128, 128).value_bits == 8192
    twelve = count_bits_sparse(12, 128)
    assert twelve.value_bits == 768 and twelve.index_bits == 84
    tiny = count_bits_sparse(1, 2)
    assert tiny.value_bits == 64 and tiny.index_bits == 1
