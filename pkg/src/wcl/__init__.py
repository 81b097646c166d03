"""Transport-based consistency loss between depth-derived point clouds.

The package is organized as a small solver library (this namespace), an HTTP
service exposing it (``wcl.service``), and a command-line client (``wcl.cli``).
The service and CLI are imported on demand so plain library use stays light.
"""

from .errors import (
    DivergenceError,
    EmptySelectionError,
    InvalidSceneError,
    NumericFailure,
    ParseError,
    UnsupportedInstanceError,
)
from .geometry import (
    DepthImage,
    GridSampler,
    Intrinsics,
    PointCloud,
    RigidTransform,
    back_project,
    compose,
    draw_offsets,
    exp_twist,
    invert,
    pose_difference,
    rotation_angle,
    skew,
    transform_cloud,
)
from .gradients import GRADIENT_MODES, VALUE_KINDS, pair_value_and_grads
from .loss import (
    GradientBundle,
    WclConfig,
    WclResult,
    plug_objective,
    wcl_gradient,
    wcl_pair,
    wcl_pair_exact,
    wcl_total,
)
from .ot import (
    SinkhornConfig,
    SinkhornSolution,
    build_cost_matrix,
    entropy,
    exact_ot_oracle,
    marginal_residual,
    sinkhorn,
)
from .refine import (
    GEOMETRIES,
    RefineConfig,
    RefineResult,
    SyntheticScene,
    generate_scene,
    refine,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "DivergenceError",
    "EmptySelectionError",
    "InvalidSceneError",
    "NumericFailure",
    "ParseError",
    "UnsupportedInstanceError",
    # geometry
    "DepthImage",
    "GridSampler",
    "Intrinsics",
    "PointCloud",
    "RigidTransform",
    "back_project",
    "compose",
    "draw_offsets",
    "exp_twist",
    "invert",
    "pose_difference",
    "rotation_angle",
    "skew",
    "transform_cloud",
    # transport
    "SinkhornConfig",
    "SinkhornSolution",
    "build_cost_matrix",
    "entropy",
    "exact_ot_oracle",
    "marginal_residual",
    "sinkhorn",
    # gradients
    "GRADIENT_MODES",
    "VALUE_KINDS",
    "pair_value_and_grads",
    # loss
    "GradientBundle",
    "WclConfig",
    "WclResult",
    "plug_objective",
    "wcl_gradient",
    "wcl_pair",
    "wcl_pair_exact",
    "wcl_total",
    # synthetic scenes and refinement
    "GEOMETRIES",
    "RefineConfig",
    "RefineResult",
    "SyntheticScene",
    "generate_scene",
    "refine",
]
