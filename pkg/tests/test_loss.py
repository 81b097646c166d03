"""Behavioral tests for the two-term cloud consistency loss."""

import numpy as np
import pytest

from wcl.errors import EmptySelectionError
from wcl.geometry import (
    DepthImage,
    GridSampler,
    PointCloud,
    RigidTransform,
    compose,
    exp_twist,
    invert,
)
from wcl.loss import (
    WclConfig,
    plug_objective,
    wcl_gradient,
    wcl_pair,
    wcl_pair_exact,
    wcl_total,
)
from wcl.ot import SinkhornConfig
from wcl.refine import SyntheticScene, generate_scene

TIGHT = WclConfig(
    sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=3000, marginal_tolerance=1e-6)
)


def _unit_cube_corners():
    return np.array([[i, j, k] for i in (0.0, 1.0) for j in (0.0, 1.0) for k in (0.0, 1.0)])


def _scene_pair(geometry="plane", seed=0, noise_std=0.0):
    scene = SyntheticScene(geometry=geometry, noise_std=noise_std)
    depth_a, depth_b, t_ab = generate_scene(scene, seed=seed)
    return scene, depth_a, depth_b, t_ab


def test_identical_clouds_cost_nothing():
    cloud = PointCloud("A", _unit_cube_corners())
    assert wcl_pair_exact(cloud, cloud) == 0.0
    assert wcl_pair(cloud, cloud, TIGHT) <= 1e-9


def test_pure_translation_has_closed_form_value():
    # Shifting a cloud by t costs exactly |t|^2 per point: the identity
    # matching is optimal because cross terms cancel against the shared mean.
    corners = _unit_cube_corners()
    for t in (np.array([0.3, 0.0, 0.4]), np.array([0.6, -0.8, 0.0])):
        qx = PointCloud("A", corners)
        qy = PointCloud("A", corners + t)
        expected = float(t @ t)
        assert wcl_pair(qx, qy, TIGHT) == pytest.approx(expected, rel=1e-2)
        assert wcl_pair_exact(qx, qy) == pytest.approx(expected, rel=1e-12)


def test_regularized_term_tracks_the_exact_value():
    rng = np.random.default_rng(6)
    qx = PointCloud("A", rng.random((6, 3)))
    qy = PointCloud("A", rng.random((6, 3)))
    approx = wcl_pair(qx, qy, TIGHT)
    exact = wcl_pair_exact(qx, qy)
    assert approx == pytest.approx(exact, rel=2e-2)


def test_term_value_is_invariant_under_a_shared_rigid_motion():
    rng = np.random.default_rng(6)
    x = rng.random((6, 3))
    y = rng.random((6, 3))
    base = wcl_pair(PointCloud("A", x), PointCloud("A", y), TIGHT)
    th = 0.7
    rot = np.array(
        [[np.cos(th), -np.sin(th), 0.0], [np.sin(th), np.cos(th), 0.0], [0.0, 0.0, 1.0]]
    )
    g = RigidTransform(rot, np.array([2.0, -1.0, 0.5]))
    moved = wcl_pair(PointCloud("A", g.apply(x)), PointCloud("A", g.apply(y)), TIGHT)
    assert moved == pytest.approx(base, abs=1e-9)


def test_square_root_of_exact_term_obeys_the_triangle_inequality():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b, c = rng.random((5, 3)), rng.random((5, 3)), rng.random((5, 3))
        d_ab = np.sqrt(wcl_pair_exact(PointCloud("A", a), PointCloud("A", b)))
        d_ac = np.sqrt(wcl_pair_exact(PointCloud("A", a), PointCloud("A", c)))
        d_cb = np.sqrt(wcl_pair_exact(PointCloud("A", c), PointCloud("A", b)))
        assert d_ab <= d_ac + d_cb + 1e-9


def test_consistent_depths_and_pose_give_negligible_loss():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-4, max_iterations=30))
    result = wcl_total(depth_a, depth_b, scene.intrinsics, t_ab, GridSampler(8, 8), config)
    assert result.loss <= 1e-6
    assert result.loss >= 0.0
    assert result.points_a == 48
    assert result.points_b == 48
    assert result.loss == result.term_a + result.term_b


def test_translation_error_in_the_pose_shows_up_as_loss():
    # A 0.1 m pose error displaces each warped cloud by about 0.1 m, so each
    # term picks up about 0.01 and the total lands near 0.02.
    scene, depth_a, depth_b, t_ab = _scene_pair()
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-4, max_iterations=200))
    bad = RigidTransform(t_ab.rotation, t_ab.translation + np.array([0.1, 0.0, 0.0]), "A", "B")
    result = wcl_total(depth_a, depth_b, scene.intrinsics, bad, GridSampler(8, 8), config)
    assert result.loss == pytest.approx(0.02, rel=5e-2)


def test_scaling_one_depth_map_raises_the_loss():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-4, max_iterations=200))
    sampler = GridSampler(8, 8)
    aligned = wcl_total(depth_a, depth_b, scene.intrinsics, t_ab, sampler, config).loss
    scaled = wcl_total(
        depth_a, DepthImage(depth_b.values * 1.1), scene.intrinsics, t_ab, sampler, config
    ).loss
    assert scaled > aligned
    assert scaled > 0.1


def test_swapping_the_images_and_inverting_the_pose_swaps_the_terms():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    sampler = GridSampler(8, 8)
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=200))
    bad = RigidTransform(t_ab.rotation, t_ab.translation + np.array([0.05, 0.0, 0.0]), "A", "B")
    fwd = wcl_total(depth_a, depth_b, scene.intrinsics, bad, sampler, config)
    inv = invert(bad)
    rev = wcl_total(
        depth_b,
        depth_a,
        scene.intrinsics,
        RigidTransform(inv.rotation, inv.translation, "A", "B"),
        sampler,
        config,
    )
    assert rev.loss == pytest.approx(fwd.loss, abs=1e-9)
    assert rev.term_a == pytest.approx(fwd.term_b, abs=1e-9)
    assert rev.term_b == pytest.approx(fwd.term_a, abs=1e-9)


def test_pose_gradient_matches_finite_differences():
    scene, depth_a, depth_b, t_true = _scene_pair(geometry="two_planes")
    sampler = GridSampler(n_c=16, n_r=12)
    config = WclConfig(
        sinkhorn=SinkhornConfig(epsilon=0.05, max_iterations=300, cost_normalization="none")
    )
    wiggle = exp_twist(np.array([0.0, 0.02, 0.0, 0.05, -0.03, 0.02]))
    moved = compose(RigidTransform(t_true.rotation, t_true.translation), wiggle)
    t_ab = RigidTransform(moved.rotation, moved.translation, "A", "B")

    result = wcl_gradient(depth_a, depth_b, scene.intrinsics, t_ab, sampler, config)
    assert np.abs(result.grads.pose_twist).max() > 0.1

    h = 1e-6

    def loss_at(step):
        nudged = compose(RigidTransform(t_ab.rotation, t_ab.translation), exp_twist(step))
        pose = RigidTransform(nudged.rotation, nudged.translation, "A", "B")
        return wcl_total(depth_a, depth_b, scene.intrinsics, pose, sampler, config).loss

    for k in range(6):
        delta = np.zeros(6)
        delta[k] = h
        est = (loss_at(delta) - loss_at(-delta)) / (2.0 * h)
        assert abs(est - result.grads.pose_twist[k]) <= 1e-8


def test_depth_gradient_matches_finite_differences_and_skips_unsampled_pixels():
    scene, depth_a, depth_b, t_true = _scene_pair(geometry="two_planes")
    sampler = GridSampler(n_c=16, n_r=12)
    config = WclConfig(
        sinkhorn=SinkhornConfig(epsilon=0.05, max_iterations=300, cost_normalization="none")
    )
    wiggle = exp_twist(np.array([0.0, 0.02, 0.0, 0.05, -0.03, 0.02]))
    moved = compose(RigidTransform(t_true.rotation, t_true.translation), wiggle)
    t_ab = RigidTransform(moved.rotation, moved.translation, "A", "B")

    result = wcl_gradient(depth_a, depth_b, scene.intrinsics, t_ab, sampler, config)

    u, v = 16, 12  # on the sampling lattice
    h = 1e-6
    bumped_up = depth_a.values.copy()
    bumped_up[v, u] += h
    bumped_down = depth_a.values.copy()
    bumped_down[v, u] -= h
    up = wcl_total(DepthImage(bumped_up), depth_b, scene.intrinsics, t_ab, sampler, config).loss
    down = wcl_total(DepthImage(bumped_down), depth_b, scene.intrinsics, t_ab, sampler, config).loss
    est = (up - down) / (2.0 * h)
    assert abs(est - result.grads.depth_a[v, u]) <= 1e-9

    u2, v2 = 5, 7  # off the lattice
    assert result.grads.depth_a[v2, u2] == 0.0
    off = depth_a.values.copy()
    off[v2, u2] += 0.5
    unchanged = wcl_total(DepthImage(off), depth_b, scene.intrinsics, t_ab, sampler, config).loss
    assert unchanged == result.loss


def test_gradient_result_reports_the_same_loss_as_the_plain_evaluation():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    sampler = GridSampler(8, 8)
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=60))
    plain = wcl_total(depth_a, depth_b, scene.intrinsics, t_ab, sampler, config)
    with_grads = wcl_gradient(depth_a, depth_b, scene.intrinsics, t_ab, sampler, config)
    assert with_grads.loss == plain.loss
    assert with_grads.grads is not None
    assert plain.grads is None
    assert with_grads.grads.depth_a.shape == depth_a.values.shape
    assert with_grads.grads.cloud_a.shape == (plain.points_a, 3)


def test_stopping_the_transformed_gradient_zeroes_the_pose_direction():
    scene, depth_a, depth_b, t_true = _scene_pair(geometry="two_planes")
    sampler = GridSampler(n_c=16, n_r=12)
    bad = RigidTransform(
        t_true.rotation, t_true.translation + np.array([0.05, 0.0, 0.0]), "A", "B"
    )
    full = wcl_gradient(
        depth_a, depth_b, scene.intrinsics, bad, sampler,
        WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=100)),
    )
    stopped = wcl_gradient(
        depth_a, depth_b, scene.intrinsics, bad, sampler,
        WclConfig(
            sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=100),
            stop_transformed_gradient=True,
        ),
    )
    assert np.all(stopped.grads.pose_twist == 0.0)
    assert np.abs(full.grads.pose_twist).max() > 0.0
    assert not np.allclose(full.grads.cloud_a, stopped.grads.cloud_a)
    assert stopped.loss == full.loss


def test_pose_with_wrong_frame_labels_is_rejected():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    backwards = RigidTransform(t_ab.rotation, t_ab.translation, "B", "A")
    with pytest.raises(ValueError, match="t_ab"):
        wcl_total(depth_a, depth_b, scene.intrinsics, backwards)


def test_lattice_that_misses_the_image_is_reported():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    sampler = GridSampler(n_c=256, n_r=4, offset_cols=100)
    with pytest.raises(EmptySelectionError):
        wcl_total(depth_a, depth_b, scene.intrinsics, t_ab, sampler)


def test_seeded_sampler_is_deterministic_and_reports_offsets():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    config = WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=60))
    first = wcl_total(
        depth_a, depth_b, scene.intrinsics, t_ab, GridSampler(8, 8, rng_seed=7), config
    )
    second = wcl_total(
        depth_a, depth_b, scene.intrinsics, t_ab, GridSampler(8, 8, rng_seed=7), config
    )
    assert first.loss == second.loss
    assert (first.offset_cols, first.offset_rows) == (second.offset_cols, second.offset_rows)
    assert 0 <= first.offset_cols < 8
    assert 0 <= first.offset_rows < 8


def test_plug_objective_adds_the_weighted_loss():
    scene, depth_a, depth_b, t_ab = _scene_pair()
    result = wcl_total(
        depth_a,
        depth_b,
        scene.intrinsics,
        t_ab,
        GridSampler(8, 8),
        WclConfig(sinkhorn=SinkhornConfig(epsilon=1e-3, max_iterations=30)),
    )
    config = WclConfig(lambda_w=0.5)
    assert plug_objective(1.0, result, config) == pytest.approx(1.0 + 0.5 * result.loss)
    zero_weight = WclConfig(lambda_w=0.0)
    assert plug_objective(2.5, result, zero_weight) == 2.5


def test_config_validation_rejects_bad_settings():
    with pytest.raises(ValueError, match="lambda_w"):
        WclConfig(lambda_w=-0.1)
    with pytest.raises(ValueError, match="value_kind"):
        WclConfig(value_kind="dual")
    with pytest.raises(ValueError, match="gradient_mode"):
        WclConfig(gradient_mode="implicit")
