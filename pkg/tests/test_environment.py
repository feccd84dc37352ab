import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starcomm.config import WorldConfig
from starcomm.environment import (MapSample, apply_clouds, clamp_positions, generate_maps, initial_positions,
                                  load_task, observe, observe_batch, relative_observation, render_glyph,
                                  step_motion, synthetic_digits, window_origin)


@pytest.fixture(scope="module")
def maps():
    return generate_maps(3, 6, 24, 12, 128, 128, channels=3, n_clouds=80, coverage=0.4)


def test_map_shapes_and_balance(maps):
    assert maps.train.images.shape == (24, 3, 128, 128)
    assert maps.train.images.dtype == np.float32
    assert np.bincount(maps.train.labels, minlength=6).tolist() == [4] * 6
    assert maps.test.images.shape[0] == 12
    assert 0.0 <= maps.train.images.min() and maps.train.images.max() <= 1.0


def test_cloud_coverage_near_target(maps):
    cover = maps.train.masks.reshape(len(maps.train), -1).mean(axis=1)
    assert np.all((cover >= 0.35) & (cover <= 0.45))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.8), st.integers(5, 100), st.integers(0, 2**31 - 1))
def test_cloud_quantile_sets_coverage(target, n_clouds, seed):
    base = MapSample(np.zeros((1, 40, 40), dtype=np.float32), 0, np.zeros((40, 40), dtype=bool))
    out = apply_clouds(base, np.random.default_rng(seed), n_clouds, target)
    assert abs(out.occlusion_mask.mean() - target) <= 0.02
    assert np.all(out.image[0][out.occlusion_mask] > 0.85)
    assert np.all(out.image[0][~out.occlusion_mask] == 0.0)


def test_no_clouds_leaves_image_untouched():
    base = MapSample(np.ones((1, 8, 8), dtype=np.float32), 2, np.zeros((8, 8), dtype=bool))
    out = apply_clouds(base, np.random.default_rng(0), 0)
    assert np.array_equal(out.image, base.image) and not out.occlusion_mask.any()


def test_maps_are_seeded(maps):
    again = generate_maps(3, 6, 24, 12, 128, 128, channels=3, n_clouds=80, coverage=0.4)
    assert np.array_equal(again.train.images, maps.train.images)
    other = generate_maps(4, 6, 24, 12, 128, 128, channels=3, n_clouds=80, coverage=0.4)
    assert not np.array_equal(other.train.images, maps.train.images)


def test_relative_observation_sizes():
    assert relative_observation(16, 128, 128) == pytest.approx(0.015625)
    assert relative_observation(4, 28, 28) == pytest.approx(0.0204, abs=1e-4)


def test_glyphs_are_distinct_and_varied():
    rng = np.random.default_rng(0)
    a = render_glyph(3, rng)
    b = render_glyph(3, rng)
    assert a.shape == (1, 28, 28)
    assert not np.array_equal(a, b)
    digits = synthetic_digits(1, 50, 20)
    means = np.array([digits.train.images[digits.train.labels == k].mean(axis=0).ravel() for k in range(10)])
    dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
    assert dist[~np.eye(10, dtype=bool)].min() > 1.0


def test_load_task_checks_geometry():
    w = WorldConfig(task="mnist", height=28, width=28, channels=1, window=4, n_classes=10, n_clouds=0,
                    cloud_coverage=0.0, n_train=20, n_test=10)
    assert load_task(w).train.images.shape == (20, 1, 28, 28)
    w.n_classes = 6
    with pytest.raises(ValueError, match="does not match"):
        load_task(w)


def test_observation_window_and_clamping():
    img = np.arange(2 * 10 * 12, dtype=np.float32).reshape(2, 10, 12)
    view = observe(img, (5.0, 4.0), 4)
    assert view.shape == (2, 4, 4)
    assert np.array_equal(view, img[:, 2:6, 3:7])
    corner = observe(img, (11.9, 9.9), 4)
    assert np.array_equal(corner, img[:, 6:10, 8:12])
    r0, c0 = window_origin([(0.0, 0.0)], 4, 10, 12)
    assert (r0[0], c0[0]) == (0, 0)


def test_observe_batch_matches_single():
    rng = np.random.default_rng(1)
    imgs = rng.random((3, 2, 16, 16)).astype(np.float32)
    pos = rng.uniform(0, 15, size=(6, 2))
    which = np.array([0, 0, 1, 2, 2, 1])
    batch = observe_batch(imgs, pos, 5, which)
    for r in range(6):
        assert np.array_equal(batch[r], observe(imgs[which[r]], pos[r], 5))


def test_goal_motion_moves_at_most_one_step():
    pos = np.array([[0.0, 0.0], [10.0, 10.0]])
    goals = np.array([[6.0, 8.0], [11.0, 10.0]])
    moved = step_motion(pos, goals, 5.0, 28, 28)
    assert np.allclose(moved, [[3.0, 4.0], [11.0, 10.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 10.0))
def test_random_motion_stays_in_map(seed, step):
    rng = np.random.default_rng(seed)
    pos = initial_positions(rng, 20, 28, 28)
    for _ in range(10):
        new = step_motion(pos, None, step, 28, 28, rng)
        assert np.all(new >= 0) and np.all(new[:, 0] <= 27) and np.all(new[:, 1] <= 27)
        assert np.all(np.linalg.norm(new - pos, axis=1) <= step + 1e-9)
        pos = new


def test_motion_errors():
    with pytest.raises(ValueError):
        step_motion(np.zeros((1, 2)), None, 1.0, 5, 5)
    with pytest.raises(ValueError):
        step_motion(np.zeros((1, 2)), np.zeros((1, 2)), 0.0, 5, 5)
    assert np.array_equal(clamp_positions(np.array([[-3.0, 40.0]]), 10, 20), [[0.0, 9.0]])
