import hashlib
import math

import numpy as np
import pytest

from centermask.synth import (CLASS_NAMES, MIN_CONTRAST, MIN_VISIBLE, _contrasting_color, _dilate, draw_circle,
                              generate_sample, standardize, tight_box)


@pytest.fixture(scope="module")
def samples():
    return [generate_sample(s) for s in range(1000)]


def test_same_seed_same_sample():
    a, b = generate_sample(42), generate_sample(42)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.boxes, b.boxes)
    np.testing.assert_array_equal(a.masks, b.masks)


def test_rejects_bad_extents():
    with pytest.raises(ValueError):
        generate_sample(0, 48, 64)
    with pytest.raises(ValueError):
        generate_sample(0, max_instances=0)


def test_boxes_are_tight_and_masks_visible(samples):
    for s in samples[:200]:
        for inst in s.instances:
            ys, xs = np.nonzero(inst.mask)
            assert inst.mask.sum() >= MIN_VISIBLE
            np.testing.assert_array_equal(inst.box, [xs.min(), ys.min(), xs.max() + 1, ys.max() + 1])


def test_tight_box():
    m = np.zeros((8, 8), np.uint8)
    m[2:5, 3] = 1
    np.testing.assert_array_equal(tight_box(m), [3, 2, 4, 5])


@pytest.mark.parametrize("r", [8, 9.5, 12, 20])
def test_circle_area(r):
    m = draw_circle(64, 64, 32.3, 31.7, r)
    assert abs(m.sum() - math.pi * r * r) <= 0.05 * math.pi * r * r


def test_instance_count_range(samples):
    counts = {len(s.instances) for s in samples}
    assert counts == {1, 2, 3, 4, 5}
    assert {len(generate_sample(s, max_instances=2).instances) for s in range(50)} <= {1, 2}


def test_distinct_seeds(samples):
    digests = {hashlib.sha256(s.pixels.tobytes()).hexdigest() for s in samples[:100]}
    assert len(digests) == 100


def test_label_distribution_uniform(samples):
    labels = np.concatenate([s.labels for s in samples])
    share = np.bincount(labels, minlength=len(CLASS_NAMES)) / labels.size
    assert np.all(np.abs(share - 1 / 3) <= 0.1 / 3)


def test_standardize():
    rng = np.random.default_rng(0)
    x = standardize(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    assert x.shape == (3, 16, 16) and x.dtype == np.float32
    np.testing.assert_allclose(x.mean(axis=(1, 2)), 0, atol=1e-5)
    np.testing.assert_allclose(x.std(axis=(1, 2)), 1, atol=1e-4)


def test_contrasting_color_rule(rng):
    bg = np.full((8, 8, 3), 0.5)
    m = np.zeros((8, 8), bool)
    m[2:5, 2:5] = True
    touching = np.zeros((8, 8), bool)
    touching[5:7, 2:5] = True
    far = np.zeros((8, 8), bool)
    far[7, 7] = True
    for _ in range(50):
        col = _contrasting_color(rng, bg, m, [touching, far], [np.array([0.1, 0.1, 0.1]), np.array([0.9, 0.9, 0.9])])
        assert np.max(np.abs(col - 0.5)) >= MIN_CONTRAST
        assert np.max(np.abs(col - 0.1)) >= MIN_CONTRAST
    # touching neighbours whose colours tile the cube leave nothing to draw
    grid = [np.array(c) for c in np.stack(np.meshgrid(*[[0.2, 0.6, 1.0]] * 3), -1).reshape(-1, 3)]
    with pytest.raises(RuntimeError):
        _contrasting_color(rng, bg, m, [touching] * len(grid), grid)


def test_instances_stand_out_from_their_surroundings(samples):
    for s in samples[:300]:
        px = s.pixels / 255.0
        for inst in s.instances:
            m = inst.mask.astype(bool)
            ring = _dilate(m) & ~m
            if ring.any():
                assert np.max(np.abs(px[m].mean(axis=0) - px[ring].mean(axis=0))) > 0.05
