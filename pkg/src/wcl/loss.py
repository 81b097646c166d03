"""The symmetric two-term consistency loss between depth/pose pairs.

Given depth maps from two cameras A and B and the motion t_ab taking frame-A
coordinates to frame-B coordinates, each image's cloud is compared against
the other image's cloud warped into its frame:

    term_a = transport(Q_A^A, Q_A^B)   both expressed in frame A
    term_b = transport(Q_B^B, Q_B^A)   both expressed in frame B

where Q_X^Y is the cloud in frame X built from image Y.  The loss is the sum
of the two terms; the ``lambda_w`` weight is only applied when plugging the
loss into an external objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DepthImage,
    GridSampler,
    Intrinsics,
    PointCloud,
    RigidTransform,
    back_project,
    draw_offsets,
    invert,
    transform_cloud,
)
from .gradients import GRADIENT_MODES, VALUE_KINDS, pair_value_and_grads
from .ot import SinkhornConfig, build_cost_matrix, exact_ot_oracle, sinkhorn

__all__ = [
    "WclConfig",
    "GradientBundle",
    "WclResult",
    "wcl_pair",
    "wcl_pair_exact",
    "wcl_total",
    "wcl_gradient",
    "plug_objective",
]


@dataclass
class WclConfig:
    """Settings for the two-term loss.

    ``stop_transformed_gradient`` freezes each term's warped cloud during
    differentiation, which confines gradient flow to the native cloud and
    zeroes the pose gradient; by default gradients flow into both clouds.
    """

    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    lambda_w: float = 0.5
    value_kind: str = "primal_cost"
    gradient_mode: str = "unrolled"
    stop_transformed_gradient: bool = False

    def __post_init__(self):
        self.lambda_w = float(self.lambda_w)
        if self.lambda_w < 0.0:
            raise ValueError(f"lambda_w must be >= 0, got {self.lambda_w}")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"value_kind must be one of {VALUE_KINDS}, got {self.value_kind!r}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(
                f"gradient_mode must be one of {GRADIENT_MODES}, got {self.gradient_mode!r}"
            )


@dataclass
class GradientBundle:
    """Gradients of the loss in each quantity's own parameterization.

    ``cloud_a`` / ``cloud_b`` are per-point gradients for the clouds in their
    native frames; ``depth_a`` / ``depth_b`` are full-size images, nonzero
    only at sampled pixels; ``pose_twist`` is the 6-vector
    [wx, wy, wz, tx, ty, tz] for a left perturbation of t_ab, i.e. the
    derivative of the loss along t_ab -> exp_twist(delta) . t_ab at delta=0.
    """

    cloud_a: np.ndarray
    cloud_b: np.ndarray
    depth_a: np.ndarray
    depth_b: np.ndarray
    pose_twist: np.ndarray


@dataclass
class WclResult:
    loss: float
    term_a: float
    term_b: float
    points_a: int
    points_b: int
    offset_cols: int
    offset_rows: int
    grads: GradientBundle | None = None


def wcl_pair(qx: PointCloud, qy: PointCloud, config: WclConfig | None = None) -> float:
    """One directional term: transport value between two clouds sharing a frame."""
    config = config or WclConfig()
    c = build_cost_matrix(qx, qy)
    sol = sinkhorn(c, config.sinkhorn)
    return sol.primal_cost if config.value_kind == "primal_cost" else sol.regularized_value


def wcl_pair_exact(qx: PointCloud, qy: PointCloud) -> float:
    """The same term evaluated with the exact (unregularized) solver.

    Square clouds only; useful as a reference value, but it has no gradient
    counterpart (the vertex solution is piecewise constant in the inputs).
    """
    value, _ = exact_ot_oracle(build_cost_matrix(qx, qy))
    return value


def _resolve_sampler(sampler: GridSampler) -> GridSampler:
    return draw_offsets(sampler) if sampler.rng_seed is not None else sampler


def _check_pose(t_ab: RigidTransform) -> RigidTransform:
    if (t_ab.source_frame or "A") != "A" or (t_ab.target_frame or "B") != "B":
        raise ValueError(
            f"t_ab must map frame 'A' to frame 'B', got {t_ab.source_frame!r} -> {t_ab.target_frame!r}"
        )
    return RigidTransform(t_ab.rotation, t_ab.translation, "A", "B")


def _build_clouds(depth_a, depth_b, intrinsics, t_ab, sampler):
    t_ba = invert(t_ab)
    q_aa = back_project(depth_a, intrinsics, sampler, frame="A", source="A")
    q_bb = back_project(depth_b, intrinsics, sampler, frame="B", source="B")
    q_ab = transform_cloud(q_bb, t_ba, "A")
    q_ba = transform_cloud(q_aa, t_ab, "B")
    return q_aa, q_bb, q_ab, q_ba


def wcl_total(
    depth_a: DepthImage,
    depth_b: DepthImage,
    intrinsics: Intrinsics,
    t_ab: RigidTransform,
    sampler: GridSampler | None = None,
    config: WclConfig | None = None,
) -> WclResult:
    """Both directional terms from raw depth maps; loss = term_a + term_b.

    When the sampler carries an rng_seed the offsets are drawn once and the
    same lattice is used for both images.  ``lambda_w`` is not applied here.
    """
    config = config or WclConfig()
    sampler = _resolve_sampler(sampler or GridSampler())
    t_ab = _check_pose(t_ab)
    q_aa, q_bb, q_ab, q_ba = _build_clouds(depth_a, depth_b, intrinsics, t_ab, sampler)
    term_a = wcl_pair(q_aa, q_ab, config)
    term_b = wcl_pair(q_bb, q_ba, config)
    return WclResult(
        loss=term_a + term_b,
        term_a=term_a,
        term_b=term_b,
        points_a=len(q_aa),
        points_b=len(q_bb),
        offset_cols=sampler.offset_cols,
        offset_rows=sampler.offset_rows,
    )


def _depth_grad_image(cloud: PointCloud, grad_points: np.ndarray, intrinsics: Intrinsics, shape):
    """Scatter per-point gradients back to depth pixels.

    A sampled point is p = d * r with r the pixel's unit-depth ray, so
    dL/dd = <dL/dp, r>.
    """
    img = np.zeros(shape)
    rays = intrinsics.rays(cloud.pixels[:, 0], cloud.pixels[:, 1])
    img[cloud.pixels[:, 1], cloud.pixels[:, 0]] = (grad_points * rays).sum(axis=1)
    return img


def wcl_gradient(
    depth_a: DepthImage,
    depth_b: DepthImage,
    intrinsics: Intrinsics,
    t_ab: RigidTransform,
    sampler: GridSampler | None = None,
    config: WclConfig | None = None,
) -> WclResult:
    """wcl_total plus gradients with respect to points, depths, and pose.

    The pose gradient lives in the left-perturbation chart at t_ab (see
    GradientBundle); the inverse warp used by term_a contributes through
    (exp_twist(delta) . t_ab)^-1 = t_ab^-1 . exp_twist(-delta).
    """
    config = config or WclConfig()
    sampler = _resolve_sampler(sampler or GridSampler())
    t_ab = _check_pose(t_ab)
    q_aa, q_bb, q_ab, q_ba = _build_clouds(depth_a, depth_b, intrinsics, t_ab, sampler)
    term_a, ga_native, ga_warped = pair_value_and_grads(
        q_aa.points, q_ab.points, config.sinkhorn, config.value_kind, config.gradient_mode
    )
    term_b, gb_native, gb_warped = pair_value_and_grads(
        q_bb.points, q_ba.points, config.sinkhorn, config.value_kind, config.gradient_mode
    )
    r_ab = t_ab.rotation
    if config.stop_transformed_gradient:
        grad_a = ga_native
        grad_b = gb_native
        pose_twist = np.zeros(6)
    else:
        # chain warped-cloud gradients back to the source points:
        # q_ba = R_ab p + t_ab  and  q_ab = R_ab^T (p - t_ab)
        grad_a = ga_native + gb_warped @ r_ab
        grad_b = gb_native + ga_warped @ r_ab.T
        w_grad = np.cross(q_ba.points, gb_warped).sum(axis=0)
        v_grad = gb_warped.sum(axis=0)
        h = ga_warped @ r_ab.T
        w_grad -= np.cross(q_bb.points, h).sum(axis=0)
        v_grad -= h.sum(axis=0)
        pose_twist = np.concatenate([w_grad, v_grad])
    grads = GradientBundle(
        cloud_a=grad_a,
        cloud_b=grad_b,
        depth_a=_depth_grad_image(q_aa, grad_a, intrinsics, depth_a.values.shape),
        depth_b=_depth_grad_image(q_bb, grad_b, intrinsics, depth_b.values.shape),
        pose_twist=pose_twist,
    )
    return WclResult(
        loss=term_a + term_b,
        term_a=term_a,
        term_b=term_b,
        points_a=len(q_aa),
        points_b=len(q_bb),
        offset_cols=sampler.offset_cols,
        offset_rows=sampler.offset_rows,
        grads=grads,
    )


def plug_objective(l_origin: float, result: WclResult, config: WclConfig) -> float:
    """Hook for adding the weighted loss to an externally computed objective."""
    return float(l_origin) + config.lambda_w * result.loss
