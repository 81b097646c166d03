"""Text formats: point clouds, depth maps, camera files, manifests, CSV dumps.

Grammars
--------
cloud        one point per line: ``x y z`` (whitespace and/or commas);
             ``#`` starts a comment, blank lines are skipped.
depth        plain-text PGM (``P2`` magic, integer samples) or CSV (rows of
             comma/whitespace-separated floats).  Values <= 0 mark invalid
             pixels.  The format is sniffed from the first data token.
intrinsics   flat ``key value`` lines (``=`` also accepted) with keys
             fx fy cx cy.
transform    same shape with keys r00..r22 (row-major rotation) and tx ty tz.
manifest     flat ``key value`` lines written in a fixed order; float values
             round-trip exactly via repr.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import ParseError
from .geometry import DepthImage, Intrinsics, RigidTransform

__all__ = [
    "read_cloud",
    "write_cloud",
    "read_depth",
    "write_depth_csv",
    "read_intrinsics",
    "read_transform",
    "write_transform",
    "write_coupling_csv",
    "write_trace_csv",
    "write_manifest",
    "read_manifest",
    "sha256_file",
]


def _data_lines(path):
    """Yield (line_number, text) with comments stripped and blanks skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield line_no, text


def read_cloud(path) -> np.ndarray:
    pts = []
    for line_no, text in _data_lines(path):
        parts = text.replace(",", " ").split()
        if len(parts) != 3:
            raise ParseError(path, f"expected 3 coordinates, got {len(parts)}", line=line_no)
        try:
            xyz = [float(p) for p in parts]
        except ValueError:
            raise ParseError(path, f"bad coordinate in {text!r}", line=line_no) from None
        if not all(math.isfinite(v) for v in xyz):
            raise ParseError(path, "non-finite coordinate", line=line_no)
        pts.append(xyz)
    if not pts:
        raise ParseError(path, "no points in file")
    return np.array(pts, dtype=float)


def write_cloud(path, points) -> None:
    points = np.asarray(points, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in points:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_depth(path) -> DepthImage:
    """Depth map from PGM or CSV, sniffed by content."""
    first = None
    for _, text in _data_lines(path):
        first = text.split()[0]
        break
    if first is None:
        raise ParseError(path, "empty depth file")
    if first == "P2":
        return _read_depth_pgm(path)
    return _read_depth_csv(path)


def _read_depth_csv(path) -> DepthImage:
    rows = []
    width = None
    for line_no, text in _data_lines(path):
        parts = text.replace(",", " ").split()
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(path, "bad depth value", line=line_no) from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ParseError(path, f"row has {len(vals)} values, expected {width}", line=line_no)
        rows.append(vals)
    return DepthImage(np.array(rows, dtype=float))


def _read_depth_pgm(path) -> DepthImage:
    tokens = []
    for line_no, text in _data_lines(path):
        for tok in text.split():
            tokens.append((tok, line_no))
    header, data = tokens[1:4], tokens[4:]
    if len(header) < 3:
        raise ParseError(path, "truncated header (need width, height, maxval)", line=tokens[-1][1])
    dims = []
    for tok, line_no in header:
        try:
            dims.append(int(tok))
        except ValueError:
            raise ParseError(path, f"bad header token {tok!r}", line=line_no) from None
    width, height, maxval = dims
    if width < 1 or height < 1 or maxval < 1:
        raise ParseError(path, f"bad dimensions {width}x{height} maxval {maxval}", line=header[0][1])
    if len(data) != width * height:
        raise ParseError(
            path,
            f"expected {width * height} pixel values, found {len(data)}",
            line=tokens[-1][1],
        )
    out = np.empty(width * height)
    for idx, (tok, line_no) in enumerate(data):
        try:
            value = int(tok)
        except ValueError:
            raise ParseError(path, f"bad pixel value {tok!r}", line=line_no) from None
        if not 0 <= value <= maxval:
            raise ParseError(path, f"pixel value {value} outside [0, {maxval}]", line=line_no)
        out[idx] = value
    return DepthImage(out.reshape(height, width))


def write_depth_csv(path, values) -> None:
    values = np.asarray(values, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_keyvalues(path, required) -> dict:
    values = {}
    for line_no, text in _data_lines(path):
        parts = text.replace("=", " ").split()
        if len(parts) != 2:
            raise ParseError(path, f"expected 'key value', got {text!r}", line=line_no)
        key, raw = parts
        if key not in required:
            raise ParseError(path, f"unknown key {key!r}", line=line_no)
        if key in values:
            raise ParseError(path, f"duplicate key {key!r}", line=line_no)
        try:
            values[key] = float(raw)
        except ValueError:
            raise ParseError(path, f"bad number for {key!r}: {raw!r}", line=line_no) from None
    missing = [k for k in required if k not in values]
    if missing:
        raise ParseError(path, f"missing keys: {', '.join(missing)}")
    return values


def read_intrinsics(path) -> Intrinsics:
    kv = _read_keyvalues(path, ("fx", "fy", "cx", "cy"))
    try:
        return Intrinsics(kv["fx"], kv["fy"], kv["cx"], kv["cy"])
    except ValueError as exc:
        raise ParseError(path, str(exc)) from None


_TRANSFORM_KEYS = ("r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz")


def read_transform(path) -> RigidTransform:
    kv = _read_keyvalues(path, _TRANSFORM_KEYS)
    rotation = np.array(
        [
            [kv["r00"], kv["r01"], kv["r02"]],
            [kv["r10"], kv["r11"], kv["r12"]],
            [kv["r20"], kv["r21"], kv["r22"]],
        ]
    )
    translation = np.array([kv["tx"], kv["ty"], kv["tz"]])
    try:
        return RigidTransform(rotation, translation)
    except ValueError as exc:
        raise ParseError(path, str(exc)) from None


def write_transform(path, transform: RigidTransform) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(3):
            for j in range(3):
                fh.write(f"r{i}{j} {float(transform.rotation[i, j])!r}\n")
        for key, value in zip(("tx", "ty", "tz"), transform.translation):
            fh.write(f"{key} {float(value)!r}\n")


def write_coupling_csv(path, coupling) -> None:
    coupling = np.asarray(coupling, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for row in coupling:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,grad_norm,pose_error\n")
        for step, loss, grad_norm, pose_error in trace:
            fh.write(f"{int(step)},{float(loss)!r},{float(grad_norm)!r},{float(pose_error)!r}\n")


def write_manifest(path, entries) -> None:
    """Flat key/value lines in the order given (dicts preserve insertion order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} {value}\n")


def read_manifest(path) -> dict:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            parts = text.split(None, 1)
            if len(parts) != 2:
                raise ParseError(path, f"expected 'key value', got {text!r}", line=line_no)
            entries[parts[0]] = parts[1]
    return entries


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
