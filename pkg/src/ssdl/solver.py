"""Accelerated proximal gradient machinery.

Solves composite problems min f2(x) + f1(x) where f2 is smooth and f1 has a
cheap proximal operator, using FISTA with a backtracking line search on the
inverse step tau.  The backtracking loop enlarges tau by eta until the
quadratic upper bound

    f2(z) <= f2(a) + <z - a, grad f2(a)> + (tau/2) ||z - a||^2

holds at the proximal candidate z, so no Lipschitz constant is needed.  tau is
warm-carried across iterations (it only ever grows).

A monotone safeguard retains the previous proximal point whenever the
accelerated candidate would increase the composite objective; momentum still
extrapolates through the candidate.  This guarantees a non-increasing
objective sequence, which the alternating updates built on top of this solver
rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidConfigurationError, NumericalError

Array = np.ndarray

_MAX_BACKTRACK = 200


def soft_threshold(H: Array, t: float) -> Array:
    """Elementwise sign(H) * max(|H| - t, 0), the prox of t * ||.||_1."""
    return np.sign(H) * np.maximum(np.abs(H) - t, 0.0)


def project_columns_l2(M: Array, alpha: float) -> Array:
    """Rescale any column with l2 norm above alpha back onto the alpha-sphere.

    Columns already inside the ball (including zero columns) are untouched, so
    the map is idempotent and preserves column directions.
    """
    norms = np.linalg.norm(M, axis=0)
    scale = np.ones_like(norms)
    over = norms > alpha
    scale[over] = alpha / norms[over]
    return M * scale


@dataclass
class FistaParams:
    """Line-search and stopping parameters.

    tau0 is the initial inverse step, eta > 1 the backtracking growth factor.
    Iterations stop at max_iters or when the relative change of the composite
    objective drops below rel_tol, whichever comes first.
    """

    tau0: float = 1.0
    eta: float = 1.5
    max_iters: int = 50
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.tau0 <= 0:
            raise InvalidConfigurationError("tau0 must be positive")
        if self.eta <= 1:
            raise InvalidConfigurationError("eta must exceed 1")
        if self.max_iters < 1:
            raise InvalidConfigurationError("max_iters must be at least 1")
        if self.rel_tol < 0:
            raise InvalidConfigurationError("rel_tol must be nonnegative")


@dataclass
class SmoothProxProblem:
    """A smooth value/gradient pair plus the prox of the nonsmooth part.

    prox(M, step) must return argmin_U  (1/(2*step)) ||U - M||^2 + f1(U),
    i.e. the proximal operator of step * f1.  nonsmooth_value supplies f1
    itself; it is only used for stopping and diagnostics.
    """

    smooth_value: Callable[[Array], float]
    smooth_gradient: Callable[[Array], Array]
    prox: Callable[[Array, float], Array]
    nonsmooth_value: Callable[[Array], float] = lambda M: 0.0


@dataclass
class FistaDiagnostics:
    """Per-iteration record of a fista run.

    objective[n] is the composite value at the retained proximal point, with
    objective[0] taken at the start point.  smooth_candidate and quad_bound
    hold the two sides of the accepted backtracking condition, so the line
    search can be audited after the fact.
    """

    objective: list = field(default_factory=list)
    smooth_candidate: list = field(default_factory=list)
    quad_bound: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    candidate_kept: list = field(default_factory=list)
    n_iters: int = 0


def fista(problem: SmoothProxProblem, x0: Array, params: FistaParams):
    """Minimize f2 + f1 from x0; returns (solution, FistaDiagnostics).

    On steps where the accelerated candidate lowers the composite objective
    (the usual case) this is the plain accelerated iteration,

        z = prox(y - grad f2(y) / tau),   y' = z + ((t-1)/t') (z - z_prev).

    When the candidate would increase the objective, the previous point is
    retained and the momentum correction of the monotone variant keeps the
    accelerated rate: y' = x' + (t/t')(z - x') + ((t-1)/t')(x' - x).
    """
    x = np.array(x0, dtype=float, copy=True)
    y = x
    t = 1.0
    tau = params.tau0

    comp = problem.smooth_value(x) + problem.nonsmooth_value(x)
    if not np.isfinite(comp):
        raise NumericalError("objective not finite at start point", iteration=0)
    diag = FistaDiagnostics(objective=[comp])

    for n in range(params.max_iters):
        grad = problem.smooth_gradient(y)
        f_y = problem.smooth_value(y)
        if not (np.isfinite(f_y) and np.isfinite(grad).all()):
            raise NumericalError("non-finite gradient or value", iteration=n)

        for _ in range(_MAX_BACKTRACK):
            cand = problem.prox(y - grad / tau, 1.0 / tau)
            f_cand = problem.smooth_value(cand)
            step = cand - y
            bound = f_y + np.vdot(step, grad) + 0.5 * tau * np.vdot(step, step)
            # tiny slack absorbs rounding when cand ~ y
            if f_cand <= bound + 1e-12 * (1.0 + abs(bound)):
                break
            tau *= params.eta
        else:
            raise NumericalError("backtracking failed to satisfy the"
                                 " quadratic bound", iteration=n)
        if not np.isfinite(f_cand):
            raise NumericalError("non-finite value at proximal point",
                                 iteration=n)

        comp_cand = f_cand + problem.nonsmooth_value(cand)
        kept = comp_cand <= comp
        x_new = cand if kept else x
        comp_new = comp_cand if kept else comp

        t_next = 0.5 * (1.0 + math.sqrt(4.0 * t * t + 1.0))
        y = x_new + (t / t_next) * (cand - x_new) \
            + ((t - 1.0) / t_next) * (x_new - x)
        x = x_new
        t = t_next

        diag.smooth_candidate.append(f_cand)
        diag.quad_bound.append(bound)
        diag.tau.append(tau)
        diag.candidate_kept.append(kept)
        diag.objective.append(comp_new)
        diag.n_iters = n + 1

        if kept and abs(comp - comp_new) <= params.rel_tol * max(1.0, abs(comp)):
            comp = comp_new
            break
        comp = comp_new

    return x, diag


def spectral_norm(M, n_iters: int = 20, seed: int = 0) -> float:
    """Largest singular value of M by power iteration on M^T M.

    Works for dense arrays and scipy sparse matrices; diagnostic accuracy
    only (n_iters fixed, deterministic start vector).
    """
    n = M.shape[1]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(n_iters):
        w = M @ v
        u = M.T @ w
        norm = np.linalg.norm(u)
        if norm == 0:
            return 0.0
        v = u / norm
        s = math.sqrt(norm)
    return s
