"""Entropy-regularized optimal transport between uniform discrete measures.

The solver runs the alternating diagonal-scaling iteration on the kernel
G = exp(-C / eps):

    u <- (1/m) / (G v),   v <- (1/n) / (G^T u)

and returns the coupling P = diag(u) G diag(v) together with the transport
cost <P, C>.  The stabilized path performs the same updates on log-domain
potentials with log-sum-exp reductions, which is immune to the under/overflow
that kills the direct iteration at small eps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericFailure, UnsupportedInstanceError
from .geometry import PointCloud

__all__ = [
    "SinkhornConfig",
    "SinkhornSolution",
    "build_cost_matrix",
    "entropy",
    "marginal_residual",
    "sinkhorn",
    "exact_ot_oracle",
]

NORMALIZATIONS = ("none", "divide_by_max", "divide_by_median")


@dataclass
class SinkhornConfig:
    """Solver settings.

    ``epsilon`` is relative to the normalized cost whenever
    ``cost_normalization`` is active (the default divides by max(C), so
    epsilon=1e-3 means one thousandth of the largest squared distance).
    ``marginal_tolerance`` = 0 disables early stopping: exactly
    ``max_iterations`` full scaling passes run.
    """

    epsilon: float = 1e-3
    max_iterations: int = 30
    marginal_tolerance: float = 0.0
    stabilized: bool = True
    cost_normalization: str = "divide_by_max"

    def __post_init__(self):
        self.epsilon = float(self.epsilon)
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        self.max_iterations = int(self.max_iterations)
        self.marginal_tolerance = float(self.marginal_tolerance)
        if self.marginal_tolerance < 0.0:
            raise ValueError(f"marginal_tolerance must be >= 0, got {self.marginal_tolerance}")
        if self.cost_normalization not in NORMALIZATIONS:
            raise ValueError(
                f"cost_normalization must be one of {NORMALIZATIONS}, got {self.cost_normalization!r}"
            )


@dataclass
class SinkhornSolution:
    """Converged (or truncated) solver state.

    ``dual_u`` / ``dual_v`` are the positive scalings; in stabilized mode they
    are exp of the log potentials and may overflow to inf at very small eps,
    in which case ``log_u`` / ``log_v`` remain finite and authoritative.
    ``regularized_value`` subtracts the entropy term in original cost units:
    <P, C> - eps_abs * H(P), where eps_abs is eps times the normalization
    scale actually applied.
    """

    coupling: np.ndarray
    dual_u: np.ndarray
    dual_v: np.ndarray
    primal_cost: float
    regularized_value: float
    iterations_run: int
    marginal_residual: float
    log_u: np.ndarray | None = None
    log_v: np.ndarray | None = None


def _points_of(cloud) -> np.ndarray:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point coordinates must be finite")
    return pts


def build_cost_matrix(a, b) -> np.ndarray:
    """m x n squared Euclidean distances between two clouds.

    Accepts PointCloud objects or plain (N, 3) arrays; both must be nonempty,
    and clouds carrying frame labels must share a frame.
    """
    if isinstance(a, PointCloud) and isinstance(b, PointCloud) and a.frame != b.frame:
        raise ValueError(f"clouds live in different frames: {a.frame!r} vs {b.frame!r}")
    pa = _points_of(a)
    pb = _points_of(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("cannot build a cost matrix from an empty cloud")
    diff = pa[:, None, :] - pb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def entropy(p) -> float:
    """H(P) = -sum_ij P_ij (log P_ij - 1), with the 0 log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    if (p < 0.0).any():
        raise ValueError("coupling entries must be nonnegative")
    vals = p[p > 0.0]
    if vals.size == 0:
        return 0.0
    return float(-(vals * (np.log(vals) - 1.0)).sum())


def marginal_residual(p) -> float:
    """Infinity-norm violation of the uniform marginals (rows sum to 1/m, columns to 1/n)."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.size == 0:
        raise ValueError(f"coupling must be a nonempty 2-D array, got shape {p.shape}")
    m, n = p.shape
    row_err = float(np.abs(p.sum(axis=1) - 1.0 / m).max())
    col_err = float(np.abs(p.sum(axis=0) - 1.0 / n).max())
    return max(row_err, col_err)


def normalization_scale(c: np.ndarray, kind: str) -> float:
    """Divisor applied to the cost before solving; falls back sensibly at zero."""
    if kind not in NORMALIZATIONS:
        raise ValueError(f"cost_normalization must be one of {NORMALIZATIONS}, got {kind!r}")
    if kind == "none":
        return 1.0
    if kind == "divide_by_max":
        s = float(c.max())
    else:
        s = float(np.median(c))
        if not s > 0.0:
            s = float(c.max())
    if not s > 0.0:
        s = 1.0
    return s


def _check_cost(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise ValueError(f"cost matrix must be a nonempty 2-D array, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains non-finite entries")
    if (c < 0.0).any():
        raise ValueError("cost matrix entries must be nonnegative")
    return c


def lse_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp, safe against overflow."""
    zmax = z.max(axis=1)
    return zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))


def lse_cols(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=0)
    return zmax + np.log(np.exp(z - zmax[None, :]).sum(axis=0))


def _solve_direct(chat: np.ndarray, config: SinkhornConfig):
    m, n = chat.shape
    with np.errstate(over="ignore", under="ignore"):
        g = np.exp(-chat / config.epsilon)
    u = np.ones(m)
    v = np.ones(n)
    its = 0
    for it in range(1, config.max_iterations + 1):
        gv = g @ v
        if not (np.isfinite(gv).all() and (gv > 0.0).all()):
            raise NumericFailure(
                "scaling iteration produced a zero or non-finite row mass "
                "(kernel underflow at this epsilon); rerun with stabilized=True"
            )
        u = (1.0 / m) / gv
        gtu = g.T @ u
        if not (np.isfinite(gtu).all() and (gtu > 0.0).all()):
            raise NumericFailure(
                "scaling iteration produced a zero or non-finite column mass "
                "(kernel underflow at this epsilon); rerun with stabilized=True"
            )
        v = (1.0 / n) / gtu
        its = it
        if config.marginal_tolerance > 0.0:
            p = u[:, None] * g * v[None, :]
            if marginal_residual(p) <= config.marginal_tolerance:
                break
    p = u[:, None] * g * v[None, :]
    return p, u, v, its


def _solve_log(chat: np.ndarray, config: SinkhornConfig):
    m, n = chat.shape
    log_k = -chat / config.epsilon
    log_a = -np.log(m)
    log_b = -np.log(n)
    f = np.zeros(m)
    g = np.zeros(n)
    z = np.empty_like(log_k)  # scratch for the log-sum-exp reductions
    its = 0
    for it in range(1, config.max_iterations + 1):
        np.add(log_k, g[None, :], out=z)
        row_max = z.max(axis=1)
        np.subtract(z, row_max[:, None], out=z)
        np.exp(z, out=z)
        row_sum = z.sum(axis=1)
        np.log(row_sum, out=row_sum)
        row_sum += row_max
        f = log_a - row_sum
        np.add(log_k, f[:, None], out=z)
        col_max = z.max(axis=0)
        np.subtract(z, col_max[None, :], out=z)
        np.exp(z, out=z)
        col_sum = z.sum(axis=0)
        np.log(col_sum, out=col_sum)
        col_sum += col_max
        g = log_b - col_sum
        its = it
        if config.marginal_tolerance > 0.0:
            # z holds exp(log_k + f - col_max), so one rescale recovers P
            p = z * np.exp(col_max + g)[None, :]
            if marginal_residual(p) <= config.marginal_tolerance:
                return p, f, g, its
    p = np.exp(f[:, None] + log_k + g[None, :])
    return p, f, g, its


def sinkhorn(c, config: SinkhornConfig | None = None) -> SinkhornSolution:
    """Solve the entropy-regularized problem for cost matrix ``c``.

    After each full (u, v) pass the marginal residual is checked against
    ``marginal_tolerance`` when that tolerance is positive; a tolerance of
    zero means a pure fixed iteration count.  With cost normalization active
    the matrix is divided by its scale before solving and both reported
    values are in original cost units (the effective regularizer in those
    units is eps * scale).

    Raises NumericFailure if the direct (unstabilized) iteration underflows
    to a zero row or column mass, which happens once exp(-C/eps) drops below
    the smallest positive float; the stabilized path has no such failure mode.
    """
    if config is None:
        config = SinkhornConfig()
    c = _check_cost(c)
    scale = normalization_scale(c, config.cost_normalization)
    chat = c / scale
    if config.stabilized:
        coupling, log_u, log_v, its = _solve_log(chat, config)
        with np.errstate(over="ignore"):
            dual_u = np.exp(log_u)
            dual_v = np.exp(log_v)
    else:
        coupling, dual_u, dual_v, its = _solve_direct(chat, config)
        log_u = log_v = None
    primal = float((coupling * c).sum())
    reg = primal - config.epsilon * scale * entropy(coupling)
    return SinkhornSolution(
        coupling=coupling,
        dual_u=dual_u,
        dual_v=dual_v,
        primal_cost=primal,
        regularized_value=reg,
        iterations_run=its,
        marginal_residual=marginal_residual(coupling),
        log_u=log_u,
        log_v=log_v,
    )


_PERM_CACHE: dict[int, np.ndarray] = {}


def _permutations(n: int) -> np.ndarray:
    if n not in _PERM_CACHE:
        _PERM_CACHE[n] = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    return _PERM_CACHE[n]


def exact_ot_oracle(c) -> tuple[float, np.ndarray]:
    """Exact unregularized transport value and one optimal vertex coupling.

    Square instances only: with uniform marginals and m = n an optimal
    coupling sits on a permutation vertex, so the problem reduces to
    assignment.  For n <= 8 every permutation is enumerated and the first
    optimum in lexicographic order wins ties; larger instances use scipy's
    assignment solver.  Returns (value, coupling) with the coupling entries
    equal to 1/n along the chosen permutation.
    """
    c = _check_cost_square(c)
    n = c.shape[0]
    if n <= 8:
        perms = _permutations(n)
        totals = c[np.arange(n)[None, :], perms].sum(axis=1)
        best_idx = int(np.argmin(totals))
        cols = perms[best_idx]
        best = float(totals[best_idx])
    else:
        rows, cols = linear_sum_assignment(c)
        best = float(c[rows, cols].sum())
    coupling = np.zeros_like(c)
    coupling[np.arange(n), cols] = 1.0 / n
    return best / n, coupling


def _check_cost_square(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise ValueError(f"cost matrix must be a nonempty 2-D array, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains non-finite entries")
    m, n = c.shape
    if m != n:
        raise UnsupportedInstanceError(
            f"the exact oracle needs a square instance (uniform weights only pair off when m = n), got {m}x{n}"
        )
    return c
