"""FastAPI surface wrapping the solver library.

Endpoints are stateless: every request carries its full input and settings.
Library errors map onto 400 responses whose ``detail.kind`` tells the client
which failure class occurred (``input``, ``numeric``, ``divergence``).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import DivergenceError, NumericFailure
from ..geometry import DepthImage, GridSampler, Intrinsics, RigidTransform, pose_difference
from ..loss import WclConfig, wcl_total
from ..ot import SinkhornConfig, build_cost_matrix, exact_ot_oracle, sinkhorn
from ..refine import RefineConfig, refine
from . import schemas

app = FastAPI(title="wcl service", version=__version__)

_NORMALIZATION = {"none": "none", "max": "divide_by_max", "median": "divide_by_median"}
_VALUE_KIND = {"primal": "primal_cost", "regularized": "regularized_value"}


@app.exception_handler(NumericFailure)
async def _numeric_failure(request: Request, exc: NumericFailure):
    return JSONResponse(status_code=400, content={"detail": {"kind": "numeric", "message": str(exc)}})


@app.exception_handler(DivergenceError)
async def _divergence(request: Request, exc: DivergenceError):
    trace = [
        {
            "step": int(step),
            "loss": float(loss),
            "grad_norm": float(grad),
            "pose_error": None if not math.isfinite(err) else float(err),
        }
        for step, loss, grad, err in exc.trace
    ]
    return JSONResponse(
        status_code=400,
        content={"detail": {"kind": "divergence", "message": str(exc), "trace": trace}},
    )


@app.exception_handler(ValueError)
async def _bad_input(request: Request, exc: ValueError):
    return JSONResponse(status_code=400, content={"detail": {"kind": "input", "message": str(exc)}})


def _cloud(rows, name: str) -> np.ndarray:
    try:
        arr = np.asarray(rows, dtype=float)
    except ValueError:
        raise ValueError(f"{name} rows have inconsistent lengths") from None
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must be an N x 3 array of coordinates")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


def _depth(rows, name: str) -> DepthImage:
    try:
        arr = np.asarray(rows, dtype=float)
    except ValueError:
        raise ValueError(f"{name} rows have inconsistent lengths") from None
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty H x W array")
    return DepthImage(arr)


def _pose(model: schemas.PoseModel) -> RigidTransform:
    rotation = np.asarray(model.rotation, dtype=float)
    translation = np.asarray(model.translation, dtype=float)
    if rotation.shape != (3, 3):
        raise ValueError("pose rotation must be a 3x3 matrix")
    if translation.shape != (3,):
        raise ValueError("pose translation must be a 3-vector")
    return RigidTransform(rotation, translation)


def _pose_model(t: RigidTransform) -> schemas.PoseModel:
    return schemas.PoseModel(rotation=t.rotation.tolist(), translation=t.translation.tolist())


def _sinkhorn_config(s: schemas.SinkhornSettings) -> SinkhornConfig:
    return SinkhornConfig(
        epsilon=s.epsilon,
        max_iterations=s.iterations,
        marginal_tolerance=s.tolerance,
        stabilized=s.stabilized,
        cost_normalization=_NORMALIZATION[s.normalization],
    )


def _wcl_config(s: schemas.WclSettings) -> WclConfig:
    return WclConfig(
        sinkhorn=_sinkhorn_config(s.sinkhorn),
        lambda_w=s.lambda_w,
        value_kind=_VALUE_KIND[s.value],
        gradient_mode=s.gradient,
    )


def _sampler(s: schemas.SamplerModel) -> GridSampler:
    return GridSampler(
        n_c=s.nc,
        n_r=s.nr,
        offset_cols=s.offset_cols,
        offset_rows=s.offset_rows,
        rng_seed=s.seed,
    )


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/compute", response_model=schemas.ComputeResponse, response_model_exclude_none=True)
def compute(req: schemas.ComputeRequest):
    a = _cloud(req.cloud_a, "cloud_a")
    b = _cloud(req.cloud_b, "cloud_b")
    sol = sinkhorn(build_cost_matrix(a, b), _sinkhorn_config(req.settings))
    return schemas.ComputeResponse(
        m=a.shape[0],
        n=b.shape[0],
        primal_cost=sol.primal_cost,
        regularized_value=sol.regularized_value,
        marginal_residual=sol.marginal_residual,
        iterations_run=sol.iterations_run,
        coupling=sol.coupling.tolist() if req.include_coupling else None,
    )


@app.post("/wcl", response_model=schemas.WclResponse)
def wcl_endpoint(req: schemas.WclRequest):
    config = _wcl_config(req.settings)
    result = wcl_total(
        _depth(req.depth_a, "depth_a"),
        _depth(req.depth_b, "depth_b"),
        Intrinsics(**req.intrinsics.model_dump()),
        _pose(req.pose),
        _sampler(req.sampler),
        config,
    )
    return schemas.WclResponse(
        term_a=result.term_a,
        term_b=result.term_b,
        loss=result.loss,
        weighted_loss=config.lambda_w * result.loss,
        points_a=result.points_a,
        points_b=result.points_b,
        offset_cols=result.offset_cols,
        offset_rows=result.offset_rows,
    )


@app.post("/refine", response_model=schemas.RefineResponse, response_model_exclude_none=True)
def refine_endpoint(req: schemas.RefineRequest):
    config = RefineConfig(
        step_size=req.refine.step_size,
        max_steps=req.refine.max_steps,
        convergence_threshold=req.refine.threshold,
        optimize_pose=req.refine.optimize_pose,
        optimize_depth=req.refine.optimize_depth,
        depth_reg_weight=req.refine.depth_reg_weight,
        sampler=_sampler(req.sampler),
        wcl=_wcl_config(req.settings),
    )
    reference = _pose(req.reference_pose) if req.reference_pose is not None else None
    result = refine(
        _depth(req.depth_a, "depth_a"),
        _depth(req.depth_b, "depth_b"),
        Intrinsics(**req.intrinsics.model_dump()),
        _pose(req.pose_init),
        config,
        reference_pose=reference,
    )
    trans_err = rot_err = None
    if reference is not None:
        trans_err, rot_err = pose_difference(result.pose, reference)
    return schemas.RefineResponse(
        pose=_pose_model(result.pose),
        status=result.status,
        steps=result.steps,
        final_loss=result.final_loss,
        trace=[
            schemas.TraceRow(
                step=int(step),
                loss=float(loss),
                grad_norm=float(grad),
                pose_error=None if not math.isfinite(err) else float(err),
            )
            for step, loss, grad, err in result.trace
        ],
        translation_error=trans_err,
        rotation_error=rot_err,
    )


@app.post("/validate", response_model=schemas.ValidateResponse)
def validate_endpoint(req: schemas.ValidateRequest):
    if not 2 <= req.n <= 32:
        raise ValueError(f"n must be between 2 and 32, got {req.n}")
    if req.trials < 1:
        raise ValueError(f"trials must be >= 1, got {req.trials}")
    if not req.epsilons or any(e <= 0 for e in req.epsilons):
        raise ValueError("epsilons must be a nonempty list of positive values")

    def one_trial(trial: int):
        rng = np.random.default_rng(req.seed + trial)
        x = rng.uniform(0.0, 1.0, (req.n, 3))
        y = rng.uniform(0.0, 1.0, (req.n, 3))
        c = build_cost_matrix(x, y)
        c = c / c.max()
        exact, _ = exact_ot_oracle(c)
        errs = []
        for eps in req.epsilons:
            sol = sinkhorn(
                c,
                SinkhornConfig(
                    epsilon=eps,
                    max_iterations=20000,
                    marginal_tolerance=1e-10,
                    stabilized=True,
                    cost_normalization="none",
                ),
            )
            errs.append(abs(sol.primal_cost - exact) / max(exact, 1e-300))
        return errs

    threads = max(1, req.threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_errs = list(pool.map(one_trial, range(req.trials)))
    else:
        all_errs = [one_trial(t) for t in range(req.trials)]
    errs = np.array(all_errs)
    monotone = np.all(np.diff(errs, axis=1) <= 1e-12, axis=1).mean() if errs.shape[1] > 1 else 1.0
    return schemas.ValidateResponse(
        entries=[
            schemas.ValidateEntry(
                epsilon=eps,
                max_rel_error=float(errs[:, i].max()),
                mean_rel_error=float(errs[:, i].mean()),
            )
            for i, eps in enumerate(req.epsilons)
        ],
        monotone_fraction=float(monotone),
        trials=req.trials,
        n=req.n,
    )


@app.post("/bench", response_model=schemas.BenchResponse)
def bench_endpoint(req: schemas.BenchRequest):
    if not req.sizes or any(s < 1 for s in req.sizes):
        raise ValueError("sizes must be a nonempty list of positive values")
    if req.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {req.iterations}")
    entries = []
    config = SinkhornConfig(epsilon=1e-3, max_iterations=req.iterations, stabilized=True)
    for size in req.sizes:
        rng = np.random.default_rng(req.seed)
        x = rng.uniform(0.0, 1.0, (size, 3))
        y = rng.uniform(0.0, 1.0, (size, 3))
        c = build_cost_matrix(x, y)
        t0 = time.perf_counter()
        sinkhorn(c, config)
        dt = time.perf_counter() - t0
        entries.append(
            schemas.BenchEntry(size=size, seconds=dt, rate=size * size * req.iterations / dt)
        )
    return schemas.BenchResponse(entries=entries)
