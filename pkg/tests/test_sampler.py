import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynrf.dataset import CameraModel, DynamicDataset, Frame
from dynrf.sampler import (ISG_FLOOR, PixelWeightTable, build_table, compute_median_images,
                           isg_weights, sample_pixels)


def dataset_from_stack(stack):
    t, h, w, _ = stack.shape
    cam = CameraModel(0, w, h, 10.0, 10.0, w / 2, h / 2, np.eye(4))
    frames = [Frame(0, i, i / max(t - 1, 1), stack[i].astype(np.float32)) for i in range(t)]
    return DynamicDataset([cam], frames, t)


def test_median_of_static_pixels(rng):
    img = rng.uniform(size=(4, 5, 3))
    ds = dataset_from_stack(np.repeat(img[None], 4, axis=0))
    np.testing.assert_allclose(compute_median_images(ds)[0], img.astype(np.float32))


def test_median_odd_count():
    stack = np.zeros((3, 1, 1, 3))
    stack[2] = 1.0
    assert np.all(compute_median_images(dataset_from_stack(stack))[0] == 0)


@pytest.mark.parametrize("t", [4, 5])
def test_median_matches_sort_oracle(t, rng):
    stack = rng.uniform(size=(t, 3, 4, 3)).astype(np.float32)
    got = compute_median_images(dataset_from_stack(stack))[0]
    expect = np.sort(stack, axis=0)[(t - 1) // 2]  # lower median for even counts
    np.testing.assert_array_equal(got, expect)


def test_isg_zero_residual_is_floor(rng):
    img = rng.uniform(size=(5, 6, 3))
    assert np.all(isg_weights(img, img) == ISG_FLOOR)


def test_isg_single_flipped_pixel():
    med = np.zeros((10, 10, 3))
    frame = med.copy()
    frame[3, 4, 0] = 1.0
    w = isg_weights(frame, med, gamma=0.05)
    assert w[3, 4] == pytest.approx((1 / 3) * (1 / (1 + 0.0025)), rel=1e-12)
    assert w[3, 4] == pytest.approx(0.3325, abs=1e-4)
    mask = np.ones_like(w, bool)
    mask[3, 4] = False
    assert np.all(w[mask] == ISG_FLOOR)


def test_isg_shape_and_gamma_errors():
    with pytest.raises(ValueError):
        isg_weights(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        isg_weights(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), gamma=0)


@given(st.floats(0, 1), st.floats(0, 1))
def test_isg_monotone_in_residual(a, b):
    lo, hi = sorted([a, b])
    med = np.zeros((1, 2, 3))
    frame = np.zeros((1, 2, 3))
    frame[0, 0] = lo
    frame[0, 1] = hi
    w = isg_weights(frame, med)
    assert w[0, 0] <= w[0, 1]
    if hi > lo and w[0, 0] > ISG_FLOOR:
        assert w[0, 0] < w[0, 1]


@given(arrays(np.float64, (3, 4, 3), elements=st.floats(0, 1)),
       arrays(np.float64, (3, 4, 3), elements=st.floats(0, 1)),
       st.permutations([0, 1, 2]))
def test_isg_channel_permutation_invariance(frame, median, perm):
    a = isg_weights(frame, median)
    b = isg_weights(frame[..., perm], median[..., perm])
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


@given(arrays(np.float64, (2, 3, 4), elements=st.floats(1e-3, 10)))
def test_table_probabilities_normalized(weights):
    table = PixelWeightTable.from_weights([(0, 0), (0, 1)], weights)
    for k in range(2):
        p = table.probabilities(k)
        assert p.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(p, weights[k] / weights[k].sum())


def test_uniform_table_frequencies():
    h, w = 4, 5
    table = PixelWeightTable.from_weights([(0, 0), (1, 0)], np.ones((2, h, w)))
    n = 1_000_000
    frame, px, py = sample_pixels(table, n, np.random.default_rng(0))
    counts = np.bincount(frame * h * w + py * w + px, minlength=2 * h * w)
    p = 1 / (2 * h * w)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)
    assert abs(np.mean(frame) - 0.5) < 0.005


def test_single_heavy_pixel():
    weights = np.full((1, 10, 10), ISG_FLOOR)
    weights[0, 2, 7] = 1000 * ISG_FLOOR
    table = PixelWeightTable.from_weights([(0, 0)], weights)
    n = 20000
    _, px, py = sample_pixels(table, n, np.random.default_rng(1))
    share = np.mean((px == 7) & (py == 2))
    exact = 1000 / 1099
    assert share > 0.85
    assert abs(share - exact) < 4 * np.sqrt(exact * (1 - exact) / n)


def test_sampling_is_seed_deterministic():
    table = PixelWeightTable.from_weights([(0, 0), (0, 1), (1, 0)], np.random.default_rng(2).uniform(0.1, 1, (3, 6, 7)))
    a = sample_pixels(table, 500, np.random.default_rng(5))
    b = sample_pixels(table, 500, np.random.default_rng(5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        sample_pixels(table, 0, np.random.default_rng(5))


def test_sampled_indices_in_range_with_extreme_weights():
    weights = np.full((3, 2, 2), 1e-3)
    weights[:, -1, -1] = 1e9  # nearly all mass on the last pixel of every frame
    table = PixelWeightTable.from_weights([(0, 0), (0, 1), (0, 2)], weights)
    frame, px, py = sample_pixels(table, 10000, np.random.default_rng(0))
    assert px.max() < 2 and py.max() < 2 and frame.max() < 3
    assert np.mean((px == 1) & (py == 1)) > 0.999


def test_tables_skip_held_out_cameras(tiny_dataset):
    for kind in ("uniform", "isg"):
        table = build_table(tiny_dataset, kind)
        cams = {k[0] for k in table.keys}
        assert cams == {c.id for c in tiny_dataset.train_cameras}
        assert len(table.keys) == len(cams) * tiny_dataset.num_timesteps
        assert table.weights.min() >= ISG_FLOOR
    with pytest.raises(ValueError):
        build_table(tiny_dataset, "ist")
