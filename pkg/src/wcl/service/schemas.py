"""Request/response models for the HTTP surface."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Normalization = Literal["none", "max", "median"]
ValueKind = Literal["primal", "regularized"]
GradientMode = Literal["unrolled", "envelope"]


class SinkhornSettings(BaseModel):
    epsilon: float = 1e-3
    iterations: int = 30
    tolerance: float = 0.0
    stabilized: bool = True
    normalization: Normalization = "max"


class ComputeRequest(BaseModel):
    cloud_a: list[list[float]]
    cloud_b: list[list[float]]
    settings: SinkhornSettings = Field(default_factory=SinkhornSettings)
    include_coupling: bool = False


class ComputeResponse(BaseModel):
    m: int
    n: int
    primal_cost: float
    regularized_value: float
    marginal_residual: float
    iterations_run: int
    coupling: Optional[list[list[float]]] = None


class IntrinsicsModel(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float


class PoseModel(BaseModel):
    rotation: list[list[float]]
    translation: list[float]


class SamplerModel(BaseModel):
    nc: int = 16
    nr: int = 4
    offset_cols: int = 0
    offset_rows: int = 0
    seed: Optional[int] = None


class WclSettings(BaseModel):
    sinkhorn: SinkhornSettings = Field(default_factory=SinkhornSettings)
    value: ValueKind = "primal"
    gradient: GradientMode = "unrolled"
    lambda_w: float = 0.5


class WclRequest(BaseModel):
    depth_a: list[list[float]]
    depth_b: list[list[float]]
    intrinsics: IntrinsicsModel
    pose: PoseModel
    sampler: SamplerModel = Field(default_factory=SamplerModel)
    settings: WclSettings = Field(default_factory=WclSettings)


class WclResponse(BaseModel):
    term_a: float
    term_b: float
    loss: float
    weighted_loss: float
    points_a: int
    points_b: int
    offset_cols: int
    offset_rows: int


class RefineSettings(BaseModel):
    step_size: float = 0.2
    max_steps: int = 500
    threshold: float = 1e-12
    optimize_pose: bool = True
    optimize_depth: bool = False
    depth_reg_weight: float = 1e-3


class RefineRequest(BaseModel):
    depth_a: list[list[float]]
    depth_b: list[list[float]]
    intrinsics: IntrinsicsModel
    pose_init: PoseModel
    sampler: SamplerModel = Field(default_factory=SamplerModel)
    settings: WclSettings = Field(default_factory=WclSettings)
    refine: RefineSettings = Field(default_factory=RefineSettings)
    reference_pose: Optional[PoseModel] = None


class TraceRow(BaseModel):
    step: int
    loss: float
    grad_norm: float
    pose_error: Optional[float] = None


class RefineResponse(BaseModel):
    pose: PoseModel
    status: str
    steps: int
    final_loss: float
    trace: list[TraceRow]
    translation_error: Optional[float] = None
    rotation_error: Optional[float] = None


class ValidateRequest(BaseModel):
    n: int = 6
    trials: int = 50
    epsilons: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    seed: int = 0
    threads: int = 1


class ValidateEntry(BaseModel):
    epsilon: float
    max_rel_error: float
    mean_rel_error: float


class ValidateResponse(BaseModel):
    entries: list[ValidateEntry]
    monotone_fraction: float
    trials: int
    n: int


class BenchRequest(BaseModel):
    sizes: list[int] = Field(default_factory=lambda: [64, 256, 1024, 4096])
    iterations: int = 30
    seed: int = 0


class BenchEntry(BaseModel):
    size: int
    seconds: float
    rate: float


class BenchResponse(BaseModel):
    entries: list[BenchEntry]
