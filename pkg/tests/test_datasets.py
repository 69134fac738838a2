"""Data ingestion and synthetic generators.

The resize oracle is a naive per-pixel double loop; the IDX files are
hand-assembled byte strings with known contents.
"""

import struct

import numpy as np
import pytest

from sparsecomm.datasets import (
    ClassificationData,
    bilinear_resize,
    ingest_idx,
    synth_classification,
    synth_linreg,
)
from sparsecomm.optimize import LinearRegressionOracle, LogisticOracle


def naive_resize(img, out_h, out_w):
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            r = i * (in_h - 1) / (out_h - 1) if out_h > 1 else 0.0
            c = j * (in_w - 1) / (out_w - 1) if out_w > 1 else 0.0
            r0 = min(int(np.floor(r)), in_h - 2) if in_h > 1 else 0
            c0 = min(int(np.floor(c)), in_w - 2) if in_w > 1 else 0
            r1 = min(r0 + 1, in_h - 1)
            c1 = min(c0 + 1, in_w - 1)
            fr, fc = r - r0, c - c0
            out[i, j] = (
                img[r0, c0] * (1 - fr) * (1 - fc)
                + img[r0, c1] * (1 - fr) * fc
                + img[r1, c0] * fr * (1 - fc)
                + img[r1, c1] * fr * fc
            )
    return out


def write_idx_pair(tmp_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    count, h, w = images.shape
    img_path = tmp_path / "imgs.idx"
    img_path.write_bytes(struct.pack(">4I", 0x803, count, h, w) + images.tobytes())
    lbl_path = tmp_path / "lbls.idx"
    lbl_path.write_bytes(struct.pack(">2I", 0x801, len(labels)) + bytes(labels))
    return img_path, lbl_path


def test_resize_to_same_shape_is_identity():
    rng = np.random.default_rng(3)
    img = rng.random((5, 7))
    np.testing.assert_allclose(bilinear_resize(img, 5, 7), img, atol=1e-14)


def test_resize_matches_naive_reference():
    rng = np.random.default_rng(8)
    for shape, out in [((7, 5), (4, 3)), ((3, 3), (6, 6)), ((4, 6), (1, 2))]:
        img = rng.random(shape)
        np.testing.assert_allclose(bilinear_resize(img, *out), naive_resize(img, *out), atol=1e-12)


def test_upsampling_a_linear_ramp_is_exact():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    rows = np.linspace(0.0, 1.0, 4)
    expected = 2.0 * rows[:, None] + rows[None, :]
    np.testing.assert_allclose(bilinear_resize(img, 4, 4), expected, atol=1e-14)


def test_idx_pair_loads_known_pixels(tmp_path):
    images = np.stack([np.arange(16).reshape(4, 4), np.arange(16).reshape(4, 4) + 100])
    img_path, lbl_path = write_idx_pair(tmp_path, images, [7, 3])
    data = ingest_idx(img_path, lbl_path, target_dim=4)
    assert data.count == 2 and data.d == 4
    np.testing.assert_array_equal(data.labels, [7, 3])
    # 4x4 down to 2x2 samples the exact corner pixels
    np.testing.assert_allclose(data.features[0], np.array([0, 3, 12, 15]) / 255.0)
    np.testing.assert_allclose(data.features[1], np.array([100, 103, 112, 115]) / 255.0)


def test_idx_full_dim_load_keeps_raw_pixels(tmp_path):
    images = np.arange(16).reshape(1, 4, 4)
    img_path, lbl_path = write_idx_pair(tmp_path, images, [5])
    data = ingest_idx(img_path, lbl_path, target_dim=16)
    np.testing.assert_allclose(data.features[0], np.arange(16) / 255.0, atol=1e-14)


def test_idx_max_items_truncates(tmp_path):
    images = np.zeros((3, 4, 4), dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, [1, 2, 3])
    data = ingest_idx(img_path, lbl_path, max_items=1, target_dim=4)
    assert data.count == 1
    np.testing.assert_array_equal(data.labels, [1])


def test_idx_rejects_malformed_files(tmp_path):
    images = np.zeros((2, 4, 4), dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, [0, 1])

    bad_magic = tmp_path / "badmagic.idx"
    bad_magic.write_bytes(struct.pack(">4I", 0x807, 2, 4, 4) + bytes(32))
    with pytest.raises(ValueError, match="bad magic"):
        ingest_idx(bad_magic, lbl_path, target_dim=4)

    short = tmp_path / "short.idx"
    short.write_bytes(img_path.read_bytes()[:-5])
    with pytest.raises(ValueError, match="truncated"):
        ingest_idx(short, lbl_path, target_dim=4)

    header_only = tmp_path / "header.idx"
    header_only.write_bytes(b"\x00\x00")
    with pytest.raises(ValueError, match="truncated header"):
        ingest_idx(header_only, lbl_path, target_dim=4)

    wrong_count = tmp_path / "count.idx"
    wrong_count.write_bytes(struct.pack(">2I", 0x801, 3) + bytes([0, 1, 2]))
    with pytest.raises(ValueError, match="images vs"):
        ingest_idx(img_path, wrong_count, target_dim=4)

    with pytest.raises(ValueError, match="perfect square"):
        ingest_idx(img_path, lbl_path, target_dim=5)


def test_classification_data_validates_row_counts():
    with pytest.raises(ValueError):
        ClassificationData(features=np.zeros((3, 2)), labels=np.zeros(2, dtype=np.int64))


def test_synth_classification_structure():
    data = synth_classification(3, 200, 5, seed=4)
    assert data.features.shape == (600, 5)
    np.testing.assert_array_equal(np.bincount(data.labels), [200, 200, 200])
    for c in range(3):
        mean = data.features[data.labels == c].mean(axis=0)
        expected = np.zeros(5)
        expected[c] = 4.0
        np.testing.assert_allclose(mean, expected, atol=0.5)


def test_synth_classification_wraps_means_past_the_dimension():
    data = synth_classification(4, 300, 2, seed=9)
    # classes 2 and 3 reuse coordinates 0 and 1
    for c, coord in [(2, 0), (3, 1)]:
        mean = data.features[data.labels == c].mean(axis=0)
        assert mean[coord] > 3.0


def test_synth_classification_is_reproducible_and_validated():
    a = synth_classification(2, 10, 3, seed=7)
    b = synth_classification(2, 10, 3, seed=7)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        synth_classification(1, 10, 3)
    with pytest.raises(ValueError):
        synth_classification(2, 0, 3)


def test_synth_blobs_are_linearly_separable():
    data = synth_classification(2, 40, 3, seed=2)
    labels = np.where(data.labels == 1, 1.0, -1.0)
    oracle = LogisticOracle([data.features], [labels], mu=1e-4)
    assert oracle.correct_rate(oracle.x_opt) > 0.95


def test_synth_linreg_rows_sum_to_one():
    features, targets, x_star = synth_linreg(3, 5, 4, seed=1)
    assert len(features) == 3 and len(targets) == 3
    for block, tgt in zip(features, targets):
        assert block.shape == (5, 4)
        assert tgt.shape == (5,)
        np.testing.assert_allclose(block.sum(axis=1), np.ones(5), atol=1e-12)
    assert x_star.shape == (4,)


def test_noiseless_linreg_recovers_the_generating_vector():
    features, targets, x_star = synth_linreg(3, 6, 4, noise_var=0.0, seed=5)
    pooled_f = np.vstack(features)
    pooled_t = np.concatenate(targets)
    solution, *_ = np.linalg.lstsq(pooled_f, pooled_t, rcond=None)
    np.testing.assert_allclose(solution, x_star, atol=1e-8)


def test_linreg_oracle_builds_from_desk_scale_shards():
    features, targets, _ = synth_linreg(10, 50, 32, seed=3)
    oracle = LinearRegressionOracle(features, targets)
    gram = sum(f.T @ f for f in features)
    assert np.isfinite(np.linalg.cond(gram))
    mean_grad = sum(oracle.gradient(i, oracle.x_star) for i in range(10)) / 10
    np.testing.assert_allclose(mean_grad, np.zeros(32), atol=1e-8)


def test_synth_linreg_is_reproducible_and_validated():
    a = synth_linreg(2, 4, 3, seed=11)
    b = synth_linreg(2, 4, 3, seed=11)
    for left, right in zip(a[0], b[0]):
        np.testing.assert_array_equal(left, right)
    np.testing.assert_array_equal(a[2], b[2])
    with pytest.raises(ValueError):
        synth_linreg(1, 2, 5)
