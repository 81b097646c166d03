"""Command-line client for the consistency-loss service.

All numeric work happens behind the service interface, which is mounted
in-process by default; ``--server URL`` points the same commands at a running
instance instead.  The CLI parses input files, ships arrays as JSON, and
renders flat ``key value`` reports whose floats are printed with repr
precision -- so a fixed seed in stabilized mode reproduces a report
byte-for-byte.

Exit codes: 0 success, 2 bad input, 3 numeric failure, 4 divergence.
"""

from __future__ import annotations

import functools
import math
import os
import sys

import click
import numpy as np

from . import __version__, fileio
from .client import ServiceClient
from .errors import DivergenceError, NumericFailure, ParseError
from .geometry import RigidTransform, compose, exp_twist
from .refine import GEOMETRIES, SyntheticScene, generate_scene

_VALUE_CHOICES = ("primal", "regularized")
_NORMALIZE_CHOICES = ("none", "max", "median")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _die(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ParseError as exc:
            _die(2, str(exc))
        except NumericFailure as exc:
            _die(3, f"{exc} (hint: rerun with --stabilized)")
        except DivergenceError as exc:
            _die(4, str(exc))
        except (ValueError, OSError) as exc:
            _die(2, str(exc))

    return wrapper


def _solver_options(fn):
    fn = click.option(
        "--epsilon", type=float, default=1e-3, show_default=True,
        help="Regularization strength, relative to the normalized cost.",
    )(fn)
    fn = click.option(
        "--iterations", type=int, default=30, show_default=True,
        help="Number of full scaling passes.",
    )(fn)
    fn = click.option(
        "--tolerance", type=float, default=0.0, show_default=True,
        help="Early-stop threshold on the marginal residual (0 = fixed count).",
    )(fn)
    fn = click.option(
        "--normalize", type=click.Choice(_NORMALIZE_CHOICES), default="max",
        show_default=True, help="Cost matrix normalization.",
    )(fn)
    fn = click.option(
        "--stabilized/--no-stabilized", default=True, show_default=True,
        help="Run the scaling updates in the log domain.",
    )(fn)
    return fn


def _sinkhorn_payload(epsilon, iterations, tolerance, normalize, stabilized) -> dict:
    return {
        "epsilon": epsilon,
        "iterations": iterations,
        "tolerance": tolerance,
        "normalization": normalize,
        "stabilized": stabilized,
    }


@click.group()
@click.version_option(__version__, prog_name="wcl")
@click.option("--server", default=None, metavar="URL",
              help="Talk to a running service instead of the in-process app.")
@click.pass_context
def main(ctx, server):
    """Transport-based consistency loss between depth-derived point clouds."""
    ctx.obj = server


@main.command()
@click.argument("cloud_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("cloud_b", type=click.Path(exists=True, dir_okay=False))
@_solver_options
@click.option("--value", "value_kind", type=click.Choice(_VALUE_CHOICES), default="primal",
              show_default=True, help="Which value the `value` report line shows.")
@click.option("--dump-coupling", type=click.Path(dir_okay=False), default=None,
              help="Write the coupling matrix to this CSV file.")
@click.pass_obj
@_handle_errors
def compute(server, cloud_a, cloud_b, epsilon, iterations, tolerance, normalize,
            stabilized, value_kind, dump_coupling):
    """Transport value between two point cloud files."""
    a = fileio.read_cloud(cloud_a)
    b = fileio.read_cloud(cloud_b)
    client = ServiceClient(server)
    out = client.post(
        "/compute",
        {
            "cloud_a": a.tolist(),
            "cloud_b": b.tolist(),
            "settings": _sinkhorn_payload(epsilon, iterations, tolerance, normalize, stabilized),
            "include_coupling": dump_coupling is not None,
        },
    )
    click.echo(f"m {out['m']}")
    click.echo(f"n {out['n']}")
    click.echo(f"iterations_run {out['iterations_run']}")
    click.echo(f"marginal_residual {_fmt(out['marginal_residual'])}")
    click.echo(f"primal_cost {_fmt(out['primal_cost'])}")
    click.echo(f"regularized_value {_fmt(out['regularized_value'])}")
    selected = out["primal_cost"] if value_kind == "primal" else out["regularized_value"]
    click.echo(f"value_kind {value_kind}")
    click.echo(f"value {_fmt(selected)}")
    if dump_coupling is not None:
        fileio.write_coupling_csv(dump_coupling, np.asarray(out["coupling"], dtype=float))


_MANIFEST_FILES = ("depth_a", "depth_b", "intrinsics", "transform")


def _wcl_settings_from_manifest(entries: dict) -> dict:
    try:
        return {
            "epsilon": float(entries["epsilon"]),
            "iterations": int(entries["iterations"]),
            "tolerance": float(entries["tolerance"]),
            "normalize": entries["normalize"],
            "stabilized": entries["stabilized"] == "true",
            "value_kind": entries["value"],
            "lambda_w": float(entries["lambda_w"]),
            "nc": int(entries["nc"]),
            "nr": int(entries["nr"]),
            "seed": None if entries["seed"] == "none" else int(entries["seed"]),
        }
    except KeyError as exc:
        raise ValueError(f"manifest is missing key {exc.args[0]!r}") from None


@main.command(name="wcl")
@click.argument("depth_a", required=False, type=click.Path(exists=True, dir_okay=False))
@click.argument("depth_b", required=False, type=click.Path(exists=True, dir_okay=False))
@click.argument("intrinsics", required=False, type=click.Path(exists=True, dir_okay=False))
@click.argument("transform", required=False, type=click.Path(exists=True, dir_okay=False))
@_solver_options
@click.option("--value", "value_kind", type=click.Choice(_VALUE_CHOICES), default="primal",
              show_default=True, help="Evaluate terms as the primal cost or the regularized value.")
@click.option("--nc", type=int, default=16, show_default=True, help="Column stride of the pixel lattice.")
@click.option("--nr", type=int, default=4, show_default=True, help="Row stride of the pixel lattice.")
@click.option("--lambda-w", type=float, default=0.5, show_default=True, help="Weight for the weighted_loss line.")
@click.option("--seed", type=int, default=None, help="Draw lattice offsets from this seed.")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None,
              help="Record the resolved run (inputs, digests, settings) to this file.")
@click.option("--from-manifest", "from_manifest", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Re-run a recorded run; repeats its output byte-for-byte.")
@click.pass_obj
@_handle_errors
def wcl_command(server, depth_a, depth_b, intrinsics, transform, epsilon, iterations,
                tolerance, normalize, stabilized, value_kind, nc, nr, lambda_w, seed,
                manifest_path, from_manifest):
    """Two-term consistency loss between two depth maps under a relative pose."""
    paths = {"depth_a": depth_a, "depth_b": depth_b, "intrinsics": intrinsics, "transform": transform}
    if from_manifest is not None:
        if any(v is not None for v in paths.values()):
            raise ValueError("pass either input files or --from-manifest, not both")
        entries = fileio.read_manifest(from_manifest)
        for name in _MANIFEST_FILES:
            if name not in entries:
                raise ValueError(f"manifest is missing key {name!r}")
            paths[name] = entries[name]
            recorded = entries.get(f"{name}_sha256")
            actual = fileio.sha256_file(paths[name])
            if recorded is not None and recorded != actual:
                raise ValueError(
                    f"{paths[name]} changed since the manifest was written "
                    f"(sha256 {actual} != recorded {recorded})"
                )
        settings = _wcl_settings_from_manifest(entries)
        epsilon, iterations, tolerance = settings["epsilon"], settings["iterations"], settings["tolerance"]
        normalize, stabilized, value_kind = settings["normalize"], settings["stabilized"], settings["value_kind"]
        lambda_w, nc, nr, seed = settings["lambda_w"], settings["nc"], settings["nr"], settings["seed"]
    elif any(v is None for v in paths.values()):
        raise ValueError("need DEPTH_A DEPTH_B INTRINSICS TRANSFORM (or --from-manifest)")

    da = fileio.read_depth(paths["depth_a"])
    db = fileio.read_depth(paths["depth_b"])
    k = fileio.read_intrinsics(paths["intrinsics"])
    pose = fileio.read_transform(paths["transform"])
    client = ServiceClient(server)
    out = client.post(
        "/wcl",
        {
            "depth_a": da.values.tolist(),
            "depth_b": db.values.tolist(),
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
            "pose": {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()},
            "sampler": {"nc": nc, "nr": nr, "seed": seed},
            "settings": {
                "sinkhorn": _sinkhorn_payload(epsilon, iterations, tolerance, normalize, stabilized),
                "value": value_kind,
                "lambda_w": lambda_w,
            },
        },
    )
    click.echo(f"points_a {out['points_a']}")
    click.echo(f"points_b {out['points_b']}")
    click.echo(f"offset_cols {out['offset_cols']}")
    click.echo(f"offset_rows {out['offset_rows']}")
    click.echo(f"term_a {_fmt(out['term_a'])}")
    click.echo(f"term_b {_fmt(out['term_b'])}")
    click.echo(f"loss {_fmt(out['loss'])}")
    click.echo(f"weighted_loss {_fmt(out['weighted_loss'])}")
    if manifest_path is not None:
        entries = {"tool_version": __version__, "command": "wcl"}
        for name in _MANIFEST_FILES:
            entries[name] = paths[name]
            entries[f"{name}_sha256"] = fileio.sha256_file(paths[name])
        entries.update(
            epsilon=epsilon, iterations=iterations, tolerance=tolerance,
            normalize=normalize, stabilized="true" if stabilized else "false",
            value=value_kind, lambda_w=lambda_w, nc=nc, nr=nr,
            seed="none" if seed is None else seed,
            offset_cols=out["offset_cols"], offset_rows=out["offset_rows"],
        )
        fileio.write_manifest(manifest_path, entries)


@main.command(name="refine")
@click.option("--scene", type=click.Choice(GEOMETRIES), default="plane", show_default=True)
@click.option("--perturb", type=float, default=0.3, show_default=True,
              help="Translation perturbation of the initial pose, in meters (applied along x).")
@click.option("--rotate", "rotate_deg", type=float, default=0.0, show_default=True,
              help="Rotation perturbation of the initial pose, in degrees (about y).")
@click.option("--noise", type=float, default=0.0, show_default=True,
              help="Gaussian depth noise added to the rendered maps.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=500, show_default=True)
@click.option("--step-size", type=float, default=0.2, show_default=True)
@click.option("--threshold", type=float, default=1e-12, show_default=True)
@click.option("--nc", type=int, default=8, show_default=True)
@click.option("--nr", type=int, default=8, show_default=True)
@_solver_options
@click.option("--value", "value_kind", type=click.Choice(_VALUE_CHOICES), default="primal", show_default=True)
@click.option("--gradient", type=click.Choice(("unrolled", "envelope")), default="unrolled", show_default=True)
@click.option("--optimize-depth/--no-optimize-depth", default=False, show_default=True)
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-step trace CSV here (also on divergence).")
@click.option("--out-pose", type=click.Path(dir_okay=False), default=None,
              help="Write the recovered pose as a transform file.")
@click.pass_obj
@_handle_errors
def refine_command(server, scene, perturb, rotate_deg, noise, seed, steps, step_size,
                   threshold, nc, nr, epsilon, iterations, tolerance, normalize,
                   stabilized, value_kind, gradient, optimize_depth, trace_path, out_pose):
    """Recover a known pose on a synthetic scene from a perturbed start."""
    scene_cfg = SyntheticScene(geometry=scene, noise_std=noise)
    d_a, d_b, t_true = generate_scene(scene_cfg, seed=seed)
    delta = np.array([0.0, math.radians(rotate_deg), 0.0, perturb, 0.0, 0.0])
    t_init = compose(t_true, exp_twist(delta))
    client = ServiceClient(server)
    payload = {
        "depth_a": d_a.values.tolist(),
        "depth_b": d_b.values.tolist(),
        "intrinsics": {
            "fx": scene_cfg.intrinsics.fx, "fy": scene_cfg.intrinsics.fy,
            "cx": scene_cfg.intrinsics.cx, "cy": scene_cfg.intrinsics.cy,
        },
        "pose_init": {"rotation": t_init.rotation.tolist(), "translation": t_init.translation.tolist()},
        "sampler": {"nc": nc, "nr": nr},
        "settings": {
            "sinkhorn": _sinkhorn_payload(epsilon, iterations, tolerance, normalize, stabilized),
            "value": value_kind,
            "gradient": gradient,
        },
        "refine": {
            "step_size": step_size, "max_steps": steps, "threshold": threshold,
            "optimize_pose": True, "optimize_depth": optimize_depth,
        },
        "reference_pose": {
            "rotation": t_true.rotation.tolist(), "translation": t_true.translation.tolist(),
        },
    }
    try:
        out = client.post("/refine", payload)
    except DivergenceError as exc:
        if trace_path is not None:
            fileio.write_trace_csv(trace_path, exc.trace)
        raise
    click.echo(f"status {out['status']}")
    click.echo(f"steps {out['steps']}")
    click.echo(f"final_loss {_fmt(out['final_loss'])}")
    click.echo(f"translation_error {_fmt(out['translation_error'])}")
    click.echo(f"rotation_error {_fmt(out['rotation_error'])}")
    pose = RigidTransform(np.asarray(out["pose"]["rotation"]), np.asarray(out["pose"]["translation"]))
    for i in range(3):
        for j in range(3):
            click.echo(f"r{i}{j} {_fmt(float(pose.rotation[i, j]))}")
    for key, val in zip(("tx", "ty", "tz"), pose.translation):
        click.echo(f"{key} {_fmt(float(val))}")
    if trace_path is not None:
        rows = [
            (r["step"], r["loss"], r["grad_norm"],
             float("nan") if r.get("pose_error") is None else r["pose_error"])
            for r in out["trace"]
        ]
        fileio.write_trace_csv(trace_path, rows)
    if out_pose is not None:
        fileio.write_transform(out_pose, pose)


def _thread_count() -> int:
    raw = os.environ.get("WCL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ValueError(f"WCL_THREADS must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ValueError(f"WCL_THREADS must be >= 1, got {threads}")
    return threads


@main.command(name="validate")
@click.option("--n", type=int, default=6, show_default=True, help="Points per cloud.")
@click.option("--trials", type=int, default=50, show_default=True)
@click.option("--epsilon", "epsilons", type=float, multiple=True,
              help="Regularization levels to sweep (repeatable). Default: 0.1 0.01 0.001.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_obj
@_handle_errors
def validate_command(server, n, trials, epsilons, seed):
    """Compare the solver against the exact oracle on random instances.

    Parallelism is capped by the WCL_THREADS environment variable (default 1).
    """
    if not epsilons:
        epsilons = (1e-1, 1e-2, 1e-3)
    client = ServiceClient(server)
    out = client.post(
        "/validate",
        {"n": n, "trials": trials, "epsilons": list(epsilons), "seed": seed,
         "threads": _thread_count()},
    )
    for entry in out["entries"]:
        click.echo(
            f"epsilon {_fmt(entry['epsilon'])} "
            f"max_rel_error {_fmt(entry['max_rel_error'])} "
            f"mean_rel_error {_fmt(entry['mean_rel_error'])}"
        )
    click.echo(f"monotone_fraction {_fmt(out['monotone_fraction'])}")
    click.echo(f"trials {out['trials']}")
    click.echo(f"n {out['n']}")


@main.command(name="bench")
@click.option("--size", "sizes", type=int, multiple=True,
              help="Problem sizes to time (repeatable). Default: 64 256 1024 4096.")
@click.option("--iterations", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_obj
@_handle_errors
def bench_command(server, sizes, iterations, seed):
    """Time the solver across problem sizes."""
    if not sizes:
        sizes = (64, 256, 1024, 4096)
    client = ServiceClient(server)
    out = client.post("/bench", {"sizes": list(sizes), "iterations": iterations, "seed": seed})
    for entry in out["entries"]:
        click.echo(
            f"size {entry['size']} seconds {_fmt(entry['seconds'])} rate {_fmt(entry['rate'])}"
        )


@main.command(name="serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_command(host, port):
    """Run the service on a real socket."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
