"""Camera geometry: depth back-projection, rigid transforms, grid subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptySelectionError

__all__ = [
    "Intrinsics",
    "DepthImage",
    "RigidTransform",
    "PointCloud",
    "GridSampler",
    "back_project",
    "transform_cloud",
    "compose",
    "invert",
    "draw_offsets",
    "exp_twist",
    "skew",
    "rotation_angle",
    "pose_difference",
]


@dataclass
class Intrinsics:
    """Pinhole camera parameters, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        for name in ("fx", "fy", "cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"intrinsic {name} must be finite")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def rays(self, us, vs) -> np.ndarray:
        """Unit-depth back-projection directions K^-1 (u, v, 1) for pixel arrays."""
        us = np.asarray(us, dtype=float)
        vs = np.asarray(vs, dtype=float)
        return np.stack(
            [(us - self.cx) / self.fx, (vs - self.cy) / self.fy, np.ones_like(us)],
            axis=-1,
        )


@dataclass
class DepthImage:
    """H x W depth field in meters; nonpositive or non-finite entries are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"depth image must be a nonempty 2-D array, got shape {v.shape}")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0.0)


@dataclass
class RigidTransform:
    """Proper rigid motion p -> R p + t, optionally labeled with frame names."""

    rotation: np.ndarray
    translation: np.ndarray
    source_frame: str | None = None
    target_frame: str | None = None

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal (R^T R differs from I by more than 1e-9)")
        if np.linalg.det(r) < 0.0:
            raise ValueError("rotation must have determinant +1 (reflections are not rigid motions)")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls, source_frame=None, target_frame=None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), source_frame, target_frame)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class PointCloud:
    """Ordered 3-D points in a named coordinate frame.

    ``source`` names the image the points came from (which may differ from the
    frame they are currently expressed in).  ``pixels`` optionally records the
    (u, v) pixel behind each point so per-pixel gradients can be scattered
    back into the depth map.
    """

    frame: str
    points: np.ndarray
    source: str | None = None
    pixels: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"points must be an (N, 3) array, got shape {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("point coordinates must be finite")
        self.points = p
        if self.pixels is not None:
            px = np.asarray(self.pixels)
            if px.shape != (p.shape[0], 2):
                raise ValueError(f"pixels must be (N, 2) to match the points, got {px.shape}")
            self.pixels = px

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class GridSampler:
    """Strided pixel lattice: every n_c-th column and n_r-th row, shifted by offsets."""

    n_c: int = 16
    n_r: int = 4
    offset_cols: int = 0
    offset_rows: int = 0
    rng_seed: int | None = None

    def __post_init__(self):
        if self.n_c < 1 or self.n_r < 1:
            raise ValueError(f"strides must be >= 1, got n_c={self.n_c}, n_r={self.n_r}")
        if not 0 <= self.offset_cols < self.n_c:
            raise ValueError(f"offset_cols must lie in [0, {self.n_c}), got {self.offset_cols}")
        if not 0 <= self.offset_rows < self.n_r:
            raise ValueError(f"offset_rows must lie in [0, {self.n_r}), got {self.offset_rows}")


def draw_offsets(sampler: GridSampler) -> GridSampler:
    """Copy ``sampler`` with offsets drawn uniformly from [0, stride).

    Deterministic for a fixed ``rng_seed``; the column offset is drawn first.
    """
    if sampler.rng_seed is None:
        raise ValueError("draw_offsets needs rng_seed set on the sampler")
    rng = np.random.default_rng(sampler.rng_seed)
    oc = int(rng.integers(0, sampler.n_c))
    orr = int(rng.integers(0, sampler.n_r))
    return replace(sampler, offset_cols=oc, offset_rows=orr)


def back_project(
    depth: DepthImage,
    intrinsics: Intrinsics,
    sampler: GridSampler,
    frame: str = "camera",
    source: str | None = None,
) -> PointCloud:
    """Lift sampled valid depth pixels into 3-D camera coordinates.

    Each selected pixel (u, v) with depth d becomes d * K^-1 (u, v, 1), i.e.
    ((u - cx) d / fx, (v - cy) d / fy, d).  Points walk the lattice row-major
    (rows outer, columns inner); pixels with nonpositive or non-finite depth
    are dropped.
    """
    cols = np.arange(sampler.offset_cols, depth.width, sampler.n_c)
    rows = np.arange(sampler.offset_rows, depth.height, sampler.n_r)
    if cols.size == 0 or rows.size == 0:
        raise EmptySelectionError("sampling lattice missed the image entirely")
    vv, uu = np.meshgrid(rows, cols, indexing="ij")
    uu = uu.ravel()
    vv = vv.ravel()
    d = depth.values[vv, uu]
    keep = np.isfinite(d) & (d > 0.0)
    if not keep.any():
        raise EmptySelectionError("no valid depth pixels under the sampling lattice")
    uu, vv, d = uu[keep], vv[keep], d[keep]
    pts = intrinsics.rays(uu, vv) * d[:, None]
    return PointCloud(frame=frame, points=pts, source=source, pixels=np.stack([uu, vv], axis=1))


def transform_cloud(cloud: PointCloud, transform: RigidTransform, target_frame: str) -> PointCloud:
    """Re-express a cloud in ``target_frame`` via ``transform``.

    Frame labels, when present on the transform, must agree with the cloud's
    frame and the requested target.  The source label rides along unchanged;
    pixel provenance is preserved.
    """
    if transform.source_frame is not None and cloud.frame != transform.source_frame:
        raise ValueError(
            f"cloud is in frame {cloud.frame!r} but the transform maps from {transform.source_frame!r}"
        )
    if transform.target_frame is not None and target_frame != transform.target_frame:
        raise ValueError(
            f"requested frame {target_frame!r} but the transform maps into {transform.target_frame!r}"
        )
    return PointCloud(
        frame=target_frame,
        points=transform.apply(cloud.points),
        source=cloud.source,
        pixels=None if cloud.pixels is None else cloud.pixels.copy(),
    )


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """The motion "t1 then t2": p -> R2 (R1 p + t1) + t2."""
    if (
        t1.target_frame is not None
        and t2.source_frame is not None
        and t1.target_frame != t2.source_frame
    ):
        raise ValueError(
            f"cannot chain: first transform lands in {t1.target_frame!r}, "
            f"second starts from {t2.source_frame!r}"
        )
    return RigidTransform(
        t2.rotation @ t1.rotation,
        t2.rotation @ t1.translation + t2.translation,
        source_frame=t1.source_frame,
        target_frame=t2.target_frame,
    )


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation, source_frame=t.target_frame, target_frame=t.source_frame)


def skew(w) -> np.ndarray:
    """The 3x3 matrix [w]_x with [w]_x p = w x p."""
    w = np.asarray(w, dtype=float).reshape(3)
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def exp_twist(xi) -> RigidTransform:
    """Exponential of a twist [wx, wy, wz, tx, ty, tz] (rotation part first).

    Uses the closed-form rotation/translation coupling with series fallbacks
    near zero angle, so the map is smooth through the identity.
    """
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    wx = skew(w)
    wx2 = wx @ wx
    if theta < 1e-8:
        r = np.eye(3) + wx + 0.5 * wx2
        vmat = np.eye(3) + 0.5 * wx + wx2 / 6.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta**2
        c = (theta - math.sin(theta)) / theta**3
        r = np.eye(3) + a * wx + b * wx2
        vmat = np.eye(3) + b * wx + c * wx2
    return RigidTransform(r, vmat @ v)


def rotation_angle(r: np.ndarray) -> float:
    """Absolute rotation angle (radians) of an orthonormal matrix."""
    c = (float(np.trace(r)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def pose_difference(t_a: RigidTransform, t_b: RigidTransform) -> tuple[float, float]:
    """(translation distance in meters, rotation angle in radians) between two poses."""
    ang = rotation_angle(t_a.rotation @ t_b.rotation.T)
    return float(np.linalg.norm(t_a.translation - t_b.translation)), ang
