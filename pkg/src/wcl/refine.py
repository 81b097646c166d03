"""Synthetic depth scenes and pose/depth recovery by gradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidSceneError
from .geometry import (
    DepthImage,
    GridSampler,
    Intrinsics,
    RigidTransform,
    compose,
    exp_twist,
    invert,
    pose_difference,
)
from .loss import WclConfig, wcl_gradient, wcl_total

__all__ = [
    "GEOMETRIES",
    "SyntheticScene",
    "RefineConfig",
    "RefineResult",
    "generate_scene",
    "refine",
]

GEOMETRIES = ("plane", "two_planes", "random_boxes")


def _default_intrinsics() -> Intrinsics:
    return Intrinsics(fx=40.0, fy=40.0, cx=31.5, cy=23.5)


def _default_pose() -> RigidTransform:
    return RigidTransform(np.eye(3), np.zeros(3), "A", "B")


@dataclass
class SyntheticScene:
    """A renderable test scene observed from two camera positions.

    Camera A sits at the world origin looking down +z; camera B is placed so
    that ``true_pose`` is exactly the frame-A-to-frame-B motion.  ``noise_std``
    adds independent Gaussian noise to each rendered depth map (clipped away
    from zero so every pixel stays valid).
    """

    geometry: str = "plane"
    intrinsics: Intrinsics = field(default_factory=_default_intrinsics)
    true_pose: RigidTransform = field(default_factory=_default_pose)
    width: int = 64
    height: int = 48
    noise_std: float = 0.0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        self.noise_std = float(self.noise_std)
        if self.noise_std < 0.0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if float(np.linalg.norm(self.true_pose.translation)) > 2.0:
            raise ValueError("true pose translation exceeds 2 m; the cameras would not share the scene")


def _scene_surfaces(geometry: str, rng: np.random.Generator):
    """Surface list: ('plane', unit normal, signed distance) and ('box', lo, hi)."""
    if geometry == "plane":
        n = np.array([0.15, -0.1, 1.0])
        n = n / np.linalg.norm(n)
        return [("plane", n, 5.0 * n[2])]
    if geometry == "two_planes":
        n1 = np.array([0.15, -0.1, 1.0])
        n1 = n1 / np.linalg.norm(n1)
        n2 = np.array([-0.35, 0.2, 1.0])
        n2 = n2 / np.linalg.norm(n2)
        return [("plane", n1, 6.0 * n1[2]), ("plane", n2, 4.5 * n2[2])]
    surfaces = [("plane", np.array([0.0, 0.0, 1.0]), 8.0)]
    for _ in range(int(rng.integers(3, 6))):
        center = np.array(
            [rng.uniform(-2.5, 2.5), rng.uniform(-1.8, 1.8), rng.uniform(4.0, 6.5)]
        )
        half = rng.uniform(0.4, 0.9, size=3)
        surfaces.append(("box", center - half, center + half))
    return surfaces


def _render(surfaces, intrinsics: Intrinsics, width: int, height: int, cam2world: RigidTransform):
    """Per-pixel camera-frame depth by ray casting with a z-buffer.

    Rays are o + lam * (R k) with k = K^-1 (u, v, 1); since k_z = 1, the ray
    parameter lam equals the camera depth of the hit.
    """
    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    dirs = intrinsics.rays(us.ravel(), vs.ravel()) @ cam2world.rotation.T
    origin = cam2world.translation
    best = np.full(width * height, np.inf)
    for surf in surfaces:
        if surf[0] == "plane":
            _, normal, dist = surf
            denom = dirs @ normal
            offset = dist - float(origin @ normal)
            with np.errstate(divide="ignore", invalid="ignore"):
                lam = np.where(np.abs(denom) > 1e-12, offset / denom, np.inf)
            lam = np.where(lam > 1e-6, lam, np.inf)
        else:
            _, lo, hi = surf
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dirs
                t_lo = (lo[None, :] - origin[None, :]) * inv
                t_hi = (hi[None, :] - origin[None, :]) * inv
            t_near = np.minimum(t_lo, t_hi).max(axis=1)
            t_far = np.maximum(t_lo, t_hi).min(axis=1)
            lam = np.where((t_far >= t_near) & (t_near > 1e-6), t_near, np.inf)
        best = np.minimum(best, lam)
    if not np.isfinite(best).all():
        raise InvalidSceneError("part of the image sees no surface; scene leaves the camera frustum")
    return best.reshape(height, width)


def generate_scene(scene: SyntheticScene, seed: int = 0):
    """Render (depth_a, depth_b, t_ab) for the scene, deterministically in ``seed``.

    Frame A is the world frame; camera B's camera-to-world motion is the
    inverse of ``true_pose``, so true_pose maps A coordinates to B
    coordinates.  Noise is drawn after the geometry, so the surfaces depend
    on the seed alone.
    """
    rng = np.random.default_rng(seed)
    surfaces = _scene_surfaces(scene.geometry, rng)
    cam_a = RigidTransform(np.eye(3), np.zeros(3))
    cam_b = invert(RigidTransform(scene.true_pose.rotation, scene.true_pose.translation))
    d_a = _render(surfaces, scene.intrinsics, scene.width, scene.height, cam_a)
    d_b = _render(surfaces, scene.intrinsics, scene.width, scene.height, cam_b)
    if scene.noise_std > 0.0:
        d_a = d_a + rng.normal(0.0, scene.noise_std, d_a.shape)
        d_b = d_b + rng.normal(0.0, scene.noise_std, d_b.shape)
        d_a = np.maximum(d_a, 1e-3)
        d_b = np.maximum(d_b, 1e-3)
    t_ab = RigidTransform(scene.true_pose.rotation, scene.true_pose.translation, "A", "B")
    return DepthImage(d_a), DepthImage(d_b), t_ab


def _default_refine_sampler() -> GridSampler:
    return GridSampler(n_c=8, n_r=8)


@dataclass
class RefineConfig:
    """Gradient-descent settings for pose/depth recovery.

    ``convergence_threshold`` serves double duty: the run stops as
    "converged" once the gradient infinity-norm drops to ten times it, and as
    "stalled" once an accepted step decreases the loss by less than it.
    Depth optimization adds a quadratic pull toward the initial maps with
    weight ``depth_reg_weight``.
    """

    step_size: float = 0.2
    max_steps: int = 500
    convergence_threshold: float = 1e-12
    optimize_pose: bool = True
    optimize_depth: bool = False
    depth_reg_weight: float = 1e-3
    sampler: GridSampler = field(default_factory=_default_refine_sampler)
    wcl: WclConfig = field(default_factory=WclConfig)

    def __post_init__(self):
        if not self.step_size > 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.convergence_threshold < 0.0:
            raise ValueError(f"convergence_threshold must be >= 0, got {self.convergence_threshold}")
        if self.depth_reg_weight < 0.0:
            raise ValueError(f"depth_reg_weight must be >= 0, got {self.depth_reg_weight}")
        if not (self.optimize_pose or self.optimize_depth):
            raise ValueError("nothing to optimize: enable optimize_pose and/or optimize_depth")


@dataclass
class RefineResult:
    pose: RigidTransform
    trace: list
    status: str
    steps: int
    final_loss: float
    depth_a: DepthImage | None = None
    depth_b: DepthImage | None = None


_MAX_HALVINGS = 40
_DIVERGENCE_PATIENCE = 10
_MIN_DEPTH = 1e-6


def refine(
    depth_a: DepthImage,
    depth_b: DepthImage,
    intrinsics: Intrinsics,
    t_init: RigidTransform,
    config: RefineConfig | None = None,
    reference_pose: RigidTransform | None = None,
) -> RefineResult:
    """Descend the consistency loss from ``t_init``.

    Each step evaluates the loss and its gradients, then walks downhill along
    the 6-dof twist at the current pose (left-multiplicative update
    T <- exp_twist(-alpha g) . T) and, when enabled, along per-pixel depth
    values.  Any loss increase triggers step halving from ``step_size``; ten
    consecutive steps without a usable decrease raise DivergenceError with
    the trace attached.

    The trace rows are (step, loss, grad_inf_norm, translation_error), with
    the error measured against ``reference_pose`` when given and NaN
    otherwise.
    """
    config = config or RefineConfig()
    pose = RigidTransform(t_init.rotation, t_init.translation, "A", "B")
    da = depth_a.values.copy()
    db = depth_b.values.copy()
    da0 = da.copy()
    db0 = db.copy()

    def objective(pose_, da_, db_):
        value = wcl_total(DepthImage(da_), DepthImage(db_), intrinsics, pose_, config.sampler, config.wcl).loss
        if config.optimize_depth:
            value += config.depth_reg_weight * (((da_ - da0) ** 2).sum() + ((db_ - db0) ** 2).sum())
        return value

    trace = []
    status = "max_steps"
    failed_steps = 0
    loss = objective(pose, da, db)
    for step in range(config.max_steps):
        res = wcl_gradient(DepthImage(da), DepthImage(db), intrinsics, pose, config.sampler, config.wcl)
        g_pose = res.grads.pose_twist if config.optimize_pose else np.zeros(6)
        if config.optimize_depth:
            g_da = res.grads.depth_a + 2.0 * config.depth_reg_weight * (da - da0)
            g_db = res.grads.depth_b + 2.0 * config.depth_reg_weight * (db - db0)
        else:
            g_da = np.zeros_like(da)
            g_db = np.zeros_like(db)
        grad_norm = float(max(np.abs(g_pose).max(), np.abs(g_da).max(), np.abs(g_db).max()))
        pose_err = pose_difference(pose, reference_pose)[0] if reference_pose is not None else float("nan")
        trace.append((step, loss, grad_norm, pose_err))
        if grad_norm <= 10.0 * config.convergence_threshold:
            status = "converged"
            break
        alpha = config.step_size
        accepted = None
        for _ in range(_MAX_HALVINGS):
            cand_pose = compose(pose, exp_twist(-alpha * g_pose)) if config.optimize_pose else pose
            cand_da = np.maximum(da - alpha * g_da, _MIN_DEPTH) if config.optimize_depth else da
            cand_db = np.maximum(db - alpha * g_db, _MIN_DEPTH) if config.optimize_depth else db
            cand_loss = objective(cand_pose, cand_da, cand_db)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                accepted = (cand_pose, cand_da, cand_db, cand_loss)
                break
            alpha *= 0.5
        if accepted is None:
            failed_steps += 1
            if failed_steps >= _DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"loss failed to decrease for {_DIVERGENCE_PATIENCE} consecutive steps",
                    trace=trace,
                )
            continue
        failed_steps = 0
        prev = loss
        pose, da, db, loss = accepted
        if prev - loss < config.convergence_threshold:
            status = "stalled"
            break
    return RefineResult(
        pose=pose,
        trace=trace,
        status=status,
        steps=len(trace),
        final_loss=loss,
        depth_a=DepthImage(da) if config.optimize_depth else None,
        depth_b=DepthImage(db) if config.optimize_depth else None,
    )
