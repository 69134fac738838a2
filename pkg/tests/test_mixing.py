"""Renormalized weight matrices, window products and spectral diagnostics.

Hand-assembled small matrices serve as oracles for the normalization
rules; eigenvalue moduli are cross-checked against characteristic
polynomial roots on small instances.
"""

import numpy as np
import pytest

from sparsecomm.compression import SparsityMask, draw_step_masks
from sparsecomm.mixing import (
    PerturbationSpec,
    assemble_mixing,
    build_coordinate_mixing,
    compact_perturbed,
    epsilon_bound,
    limit_matrix,
    normalize_in,
    normalize_out,
    perturbation_matrix,
    predict_er_decay,
    spectral_report,
    verify_geometric_decay,
    window_product,
)
from sparsecomm.topology import DirectedGraphSnapshot, build_weights, generate_er_schedule


def keep_all(d, n):
    return [SparsityMask(d=d, kept=tuple(range(d)), node=i) for i in range(n)]


def keep_only(d, n, indices_by_node):
    return [SparsityMask(d=d, kept=tuple(sorted(indices_by_node[i])), node=i) for i in range(n)]


def complete_weights(n):
    snap = DirectedGraphSnapshot.from_edges(n, [(i, j) for i in range(n) for j in range(n)])
    return build_weights(snap)


def test_no_sparsification_leaves_in_weights_unchanged():
    weights = complete_weights(3)
    a = normalize_in(weights.w_in, keep_all(2, 3), 0)
    np.testing.assert_allclose(a, weights.w_in)


def test_all_senders_dropping_reduces_to_identity():
    weights = complete_weights(3)
    # nobody transmits coordinate 0, so every state row collapses to self
    masks = keep_only(2, 3, {0: [1], 1: [1], 2: [1]})
    a = normalize_in(weights.w_in, masks, 0)
    np.testing.assert_allclose(a, np.eye(3))


def test_in_renormalization_spreads_lost_mass():
    weights = complete_weights(3)
    masks = keep_only(2, 3, {0: [0, 1], 1: [0, 1], 2: [1]})
    a = normalize_in(weights.w_in, masks, 0)
    # sender 2 drops coordinate 0: rows 0 and 1 renormalize over senders
    # {0, 1}, while row 2 still hears 0 and 1 plus its own self-loop
    np.testing.assert_allclose(a[0], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(a[1], [0.5, 0.5, 0.0])
    np.testing.assert_allclose(a[2], [1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(a.sum(axis=1), np.ones(3))


def test_out_normalization_keeps_columns_when_all_transmit():
    weights = complete_weights(3)
    b = normalize_out(weights.w_out, keep_all(2, 3), 1)
    np.testing.assert_allclose(b, weights.w_out)


def test_out_normalization_sender_keeps_own_mass_when_dropping():
    weights = complete_weights(3)
    masks = keep_only(2, 3, {0: [0], 1: [0, 1], 2: [0, 1]})
    b = normalize_out(weights.w_out, masks, 1)
    np.testing.assert_allclose(b[:, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(b[:, 1], weights.w_out[:, 1])
    np.testing.assert_allclose(b.sum(axis=0), np.ones(3))


def test_receiver_convention_renormalizes_surviving_rows():
    weights = complete_weights(3)
    masks = keep_only(2, 3, {0: [0, 1], 1: [0], 2: [0, 1]})
    b = normalize_out(weights.w_out, masks, 1, "receiver")
    # receiver 1 drops coordinate 1, so each column redistributes over rows
    # that kept it plus the sender's own row
    np.testing.assert_allclose(b[:, 0], [0.5, 0.0, 0.5])
    np.testing.assert_allclose(b.sum(axis=0), np.ones(3))


def test_out_normalization_rejects_unknown_convention():
    weights = complete_weights(2)
    with pytest.raises(ValueError):
        normalize_out(weights.w_out, keep_all(1, 2), 0, "broadcast")


def test_assembled_matrix_matches_block_formula():
    weights = complete_weights(2)
    a = normalize_in(weights.w_in, keep_all(1, 2), 0)
    b = normalize_out(weights.w_out, keep_all(1, 2), 0)
    expected = np.block([[a, np.zeros((2, 2))], [np.eye(2) - a, b]])
    np.testing.assert_allclose(assemble_mixing(a, b), expected)


def test_single_node_assembly_is_identity():
    one = np.ones((1, 1))
    np.testing.assert_allclose(assemble_mixing(one, one), np.eye(2))


def test_assembled_columns_sum_to_one():
    schedule = generate_er_schedule(6, 0.6, horizon=8, window=1, seed=4)
    for t in range(8):
        weights = build_weights(schedule[t])
        state, surplus = draw_step_masks(3, t, 6, 4, 2)
        for m in range(4):
            mix = build_coordinate_mixing(weights, state, surplus, m)
            np.testing.assert_allclose(mix.combined.sum(axis=0), np.ones(12), atol=1e-12)
            assert (mix.in_mix >= 0).all() and (mix.out_mix >= 0).all()
            assert (np.diag(mix.in_mix) > 0).all()


def test_perturbation_columns_sum_to_zero():
    f = perturbation_matrix(4)
    np.testing.assert_allclose(f.sum(axis=0), np.zeros(8), atol=1e-15)
    np.testing.assert_allclose(f[:4, 4:], np.eye(4))
    np.testing.assert_allclose(f[4:, 4:], -np.eye(4))


def test_compact_form_equals_plain_plus_feedback():
    weights = complete_weights(2)
    mix = build_coordinate_mixing(weights, keep_all(1, 2), keep_all(1, 2), 0)
    np.testing.assert_allclose(compact_perturbed(mix, PerturbationSpec(0.0)), mix.combined)
    np.testing.assert_allclose(
        compact_perturbed(mix, PerturbationSpec(0.05)),
        mix.combined + 0.05 * perturbation_matrix(2),
    )


def test_window_product_of_identities_is_identity_plus_feedback():
    factors = [np.eye(6), np.eye(6)]
    np.testing.assert_allclose(window_product(factors, 0.1), np.eye(6) + 0.1 * perturbation_matrix(3))


def test_window_product_single_factor_matches_compact_form():
    weights = complete_weights(2)
    mix = build_coordinate_mixing(weights, keep_all(1, 2), keep_all(1, 2), 0)
    np.testing.assert_allclose(
        window_product([mix.combined], 0.05), compact_perturbed(mix, PerturbationSpec(0.05))
    )


def test_window_product_columns_sum_to_one():
    schedule = generate_er_schedule(4, 0.7, horizon=3, window=3, seed=6)
    factors = []
    for t in range(3):
        weights = build_weights(schedule[t])
        state, surplus = draw_step_masks(9, t, 4, 2, 1)
        factors.append(build_coordinate_mixing(weights, state, surplus, 0).combined)
    product = window_product(factors, 0.05)
    np.testing.assert_allclose(product.sum(axis=0), np.ones(8), atol=1e-10)


def test_window_product_applies_factors_newest_first():
    lower = np.tril(np.ones((2, 2))) / np.array([1.0, 2.0])[:, None]
    upper = np.triu(np.ones((2, 2))) / np.array([2.0, 1.0])[:, None]
    a = np.block([[lower, np.zeros((2, 2))], [np.eye(2) - lower, np.eye(2)]])
    b = np.block([[upper, np.zeros((2, 2))], [np.eye(2) - upper, np.eye(2)]])
    np.testing.assert_allclose(window_product([a, b], 0.0), b @ a)


def test_window_product_rejects_empty_window():
    with pytest.raises(ValueError):
        window_product([], 0.05)


def test_limit_matrix_structure():
    lim = limit_matrix(3)
    assert lim.shape == (6, 6)
    np.testing.assert_allclose(lim[:3, :], np.full((3, 6), 1 / 3))
    np.testing.assert_allclose(lim[3:, :], np.zeros((3, 6)))


def test_spectral_report_of_limit_matrix_has_zero_rate():
    report = spectral_report(limit_matrix(4), d=2)
    assert report.decay_rate < 1e-12
    assert report.prefactor == pytest.approx(np.sqrt(2 * 4 * 2))


def test_spectral_report_identity_counts_repeated_unit_eigenvalue():
    report = spectral_report(np.eye(2), d=1)
    np.testing.assert_allclose(report.moduli, [1.0, 1.0])
    assert report.eig1_multiplicity == 2
    assert np.isnan(report.subunit_modulus)


def test_perturbed_complete_graph_contracts():
    weights = complete_weights(2)
    mix = build_coordinate_mixing(weights, keep_all(1, 2), keep_all(1, 2), 0)
    report = spectral_report(compact_perturbed(mix, PerturbationSpec(0.05)), d=1)
    assert report.eig1_multiplicity == 1
    assert report.decay_rate < 1.0


def test_eigenvalue_moduli_match_characteristic_polynomial_roots():
    weights = complete_weights(3)
    state, surplus = draw_step_masks(2, 0, 3, 2, 1)
    mix = build_coordinate_mixing(weights, state, surplus, 0)
    matrix = compact_perturbed(mix, PerturbationSpec(0.05))
    report = spectral_report(matrix, d=2)
    # the coefficient roundtrip is mildly ill-conditioned, hence the loose atol
    roots = np.sort(np.abs(np.roots(np.poly(matrix))))[::-1]
    np.testing.assert_allclose(report.moduli, roots, atol=1e-5)


def test_feedback_gain_bound_arithmetic():
    # moduli (1, 1, third, 0) realized directly by diagonal matrices
    assert epsilon_bound([np.diag([1.0, 1.0, 0.0, 0.0])], 2) == pytest.approx(1 / 1296)
    assert epsilon_bound([np.diag([1.0, 1.0, 0.5, 0.0])], 2) == pytest.approx(0.25 / 1296)


def test_feedback_gain_bound_zero_when_mixing_absent():
    with pytest.warns(UserWarning):
        assert epsilon_bound([np.eye(4)], 2) == 0.0


def test_gains_below_bound_keep_a_simple_unit_eigenvalue():
    weights = complete_weights(4)
    mix = build_coordinate_mixing(weights, keep_all(2, 4), keep_all(2, 4), 0)
    plain = window_product([mix.combined], 0.0)
    bound = epsilon_bound([plain], 4)
    assert bound > 0
    report = spectral_report(plain + (bound / 2) * perturbation_matrix(4), d=2)
    assert report.eig1_multiplicity == 1
    assert report.decay_rate < 1.0


def test_geometric_decay_trace_passes_on_er_schedule():
    schedule = generate_er_schedule(5, 0.9, horizon=12, window=1, seed=13)
    trace = verify_geometric_decay(schedule, epsilon=0.05, n_windows=12, d=4, k=2, seed=1)
    assert trace.passed
    assert trace.deviations.shape == (12,)
    assert trace.deviations[-1] < trace.deviations[0]
    assert trace.rate_max == pytest.approx(trace.window_rates.max())


def test_decay_trace_rejects_short_schedule():
    schedule = generate_er_schedule(4, 0.9, horizon=6, window=1, seed=2)
    with pytest.raises(ValueError):
        verify_geometric_decay(schedule, epsilon=0.05, n_windows=10, d=2)


def test_er_prediction_reduces_cleanly_without_sparsification():
    pred = predict_er_decay(10, degree=9.0, k=4, d=4, window=1)
    assert pred.effective_edge_prob == pytest.approx(0.9)
    assert pred.third_modulus_bound == pytest.approx(2 / 3)
    assert pred.informative


def test_er_prediction_flags_vacuous_bounds():
    pred = predict_er_decay(10, degree=9.0, k=12, d=128, window=1)
    assert pred.third_modulus_bound == pytest.approx(np.sqrt(4 * 128 / (12 * 9.0)))
    assert not pred.informative


def test_er_prediction_rejects_disconnected_regime():
    with pytest.raises(ValueError):
        predict_er_decay(10, degree=1.0, k=1, d=64, window=1)
