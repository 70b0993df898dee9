"""The joint objective and its alternating sub-problem updates.

The model couples four blocks of variables through one objective:

    min_{W,b,A,P,D in C}  ||X - DA||_F^2 + lam ||A||_1 + beta tr(A L A^T)
        + gamma ( ||Q_l o (W A_l + B_l - Y)||_F^2
                  + sum_k ||Q_k o P_k^{r/2} o (W A_u + B_u - Y_k)||_F^2 )
        + mu (||W||_F^2 + ||b||^2)

where Q_l / Q_k are binary active-point masks (hinge-style: only samples with
margin y * score < 1 contribute), P holds per-unlabelled-sample class
probabilities on the simplex, Y_k is the +/-1 target pattern assuming every
unlabelled sample belongs to class k, and B_l / B_u broadcast the bias.

Each update below minimizes the objective over one block with the others
fixed: masks and probabilities have closed forms, sparse coding and the
dictionary run FISTA, and the classifier solves per-class ridge systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import solver
from .errors import InvalidConfigurationError
from .graph import NeighborGraph, laplacian_quadratic
from .solver import FistaParams, SmoothProxProblem, fista, soft_threshold, \
    project_columns_l2

Array = np.ndarray


@dataclass(frozen=True)
class HyperParams:
    """Weights of the objective terms plus structural sizes.

    lam: l1 sparsity weight; beta: manifold weight; gamma: classification
    weight; mu: classifier ridge; alpha: atom norm bound; p: atom count;
    k: neighbor count; r >= 1: probability activation exponent (r >= 1 keeps
    the probability sub-problem convex).
    """

    lam: float = 0.3
    beta: float = 0.5
    gamma: float = 0.5
    mu: float = 1.0
    alpha: float = 1.0
    p: int = 200
    k: int = 8
    r: float = 1.7

    def __post_init__(self):
        if min(self.lam, self.beta, self.gamma, self.mu) < 0:
            raise InvalidConfigurationError("term weights must be nonnegative")
        if self.alpha <= 0:
            raise InvalidConfigurationError("alpha must be positive")
        if self.p < 1 or self.k < 1:
            raise InvalidConfigurationError("p and k must be at least 1")
        if self.r < 1:
            raise InvalidConfigurationError("r must be at least 1")


@dataclass
class Classifier:
    """One-vs-all linear classifier: W is (C, p), b is (C,)."""

    W: Array
    b: Array

    def scores(self, A: Array) -> Array:
        return self.W @ A + self.b[:, None]


@dataclass
class ActiveMasks:
    """Binary masks marking the margin-violating (active) samples.

    labelled[c, i] = 1 exactly when y_i^c * score_c(a_i) < 1.
    unlabelled[k, c, j] = 1 exactly when y^c(k) * score_c(a_j) < 1, where
    y^c(k) = +1 if c == k else -1 (the pattern assuming sample j is in
    class k).
    """

    labelled: Array
    unlabelled: Array


def candidate_targets(C: int) -> Array:
    """T[k, c] = +1 if c == k else -1: per-candidate-class target patterns."""
    return 2.0 * np.eye(C) - 1.0


def update_active_masks(clf: Classifier, A: Array, Y: Array,
                        n_unlabelled: int) -> ActiveMasks:
    """Recompute both masks from the current classifier and codes."""
    C, N_l = Y.shape
    S = clf.scores(A)
    labelled = (Y * S[:, :N_l] < 1.0).astype(float)
    T = candidate_targets(C)
    S_u = S[:, N_l:N_l + n_unlabelled]
    unlabelled = (T[:, :, None] * S_u[None, :, :] < 1.0).astype(float)
    return ActiveMasks(labelled=labelled, unlabelled=unlabelled)


def _candidate_costs(clf: Classifier, A_u: Array, masks: ActiveMasks) -> Array:
    """e[k, j] = sum_c Q_k[c, j] (score_c(a_j) - y^c(k))^2.

    Because the targets are +/-1, (y (w.a + b) - 1)^2 = (w.a + b - y)^2, so
    this is exactly the unlabelled objective residual at P_k = 1.
    """
    C = masks.unlabelled.shape[0]
    S_u = clf.scores(A_u)
    resid = S_u[None, :, :] - candidate_targets(C)[:, :, None]
    return np.sum(masks.unlabelled * resid * resid, axis=1)


def update_probabilities(clf: Classifier, A_u: Array, masks: ActiveMasks,
                         r: float) -> Array:
    """Per-column simplex minimizer of sum_k p_k^r e_k.

    For r > 1 the interior stationarity condition gives p_k proportional to
    e_k^(-1/(r-1)); classes with zero cost absorb all mass (uniformly if there
    are several).  For r = 1 the objective is linear, so all mass goes to the
    cheapest class, split uniformly across exact ties.
    """
    e = _candidate_costs(clf, A_u, masks)
    C, N_u = e.shape
    P = np.zeros((C, N_u))
    for j in range(N_u):
        ej = e[:, j]
        zero = ej <= 0.0
        if zero.any():
            P[zero, j] = 1.0 / zero.sum()
        elif r == 1.0:
            best = ej == ej.min()
            P[best, j] = 1.0 / best.sum()
        else:
            logw = -np.log(ej) / (r - 1.0)
            w = np.exp(logw - logw.max())
            P[:, j] = w / w.sum()
    return P


def objective(X: Array, D: Array, A: Array, graph: NeighborGraph | None,
              clf: Classifier, P: Array, masks: ActiveMasks, Y: Array,
              hp: HyperParams) -> float:
    """Full objective value at the given state."""
    C, N_l = Y.shape
    if A.shape[1] != X.shape[1]:
        raise InvalidConfigurationError("codes and samples disagree on N")
    R = X - D @ A
    val = float(np.vdot(R, R)) + hp.lam * float(np.abs(A).sum())
    if graph is not None and hp.beta != 0.0:
        val += hp.beta * laplacian_quadratic(graph.L, A)
    S = clf.scores(A)
    resid_l = S[:, :N_l] - Y
    val += hp.gamma * float(np.sum(masks.labelled * resid_l * resid_l))
    N_u = A.shape[1] - N_l
    if N_u and hp.gamma != 0.0:
        resid_u = S[:, N_l:][None, :, :] - candidate_targets(C)[:, :, None]
        Pr = P ** hp.r
        val += hp.gamma * float(
            np.sum(masks.unlabelled * Pr[:, None, :] * resid_u * resid_u))
    val += hp.mu * (float(np.vdot(clf.W, clf.W)) + float(np.vdot(clf.b, clf.b)))
    return val


def _coding_problem(X: Array, D: Array, graph: NeighborGraph | None,
                    clf: Classifier | None, P: Array | None,
                    masks: ActiveMasks | None, Y: Array | None,
                    hp: HyperParams) -> SmoothProxProblem:
    """Smooth/prox split of the sparse-coding sub-problem (masks, P frozen)."""
    use_graph = graph is not None and hp.beta != 0.0
    use_clf = clf is not None and hp.gamma != 0.0
    if use_clf:
        C, N_l = Y.shape
        N_u = X.shape[1] - N_l
        T = candidate_targets(C)
        bias = clf.b[:, None]
        Pr = P ** hp.r if N_u else np.zeros((C, 0))
        QPr = masks.unlabelled * Pr[:, None, :] if N_u else None

    def smooth_value(A):
        R = X - D @ A
        v = float(np.vdot(R, R))
        if use_graph:
            v += hp.beta * laplacian_quadratic(graph.L, A)
        if use_clf:
            S_l = clf.W @ A[:, :N_l] + bias
            rl = S_l - Y
            v += hp.gamma * float(np.sum(masks.labelled * rl * rl))
            if N_u:
                S_u = clf.W @ A[:, N_l:] + bias
                ru = S_u[None, :, :] - T[:, :, None]
                v += hp.gamma * float(np.sum(QPr * ru * ru))
        return v

    def smooth_gradient(A):
        G = -2.0 * (D.T @ (X - D @ A))
        if use_graph:
            G += (2.0 * hp.beta) * (graph.L @ A.T).T
        if use_clf:
            S_l = clf.W @ A[:, :N_l] + bias
            G[:, :N_l] += (2.0 * hp.gamma) * (
                clf.W.T @ (masks.labelled * (S_l - Y)))
            if N_u:
                S_u = clf.W @ A[:, N_l:] + bias
                ru = S_u[None, :, :] - T[:, :, None]
                G[:, N_l:] += (2.0 * hp.gamma) * (
                    clf.W.T @ np.sum(QPr * ru, axis=0))
        return G

    return SmoothProxProblem(
        smooth_value=smooth_value,
        smooth_gradient=smooth_gradient,
        prox=lambda M, step: soft_threshold(M, step * hp.lam),
        nonsmooth_value=lambda A: hp.lam * float(np.abs(A).sum()),
    )


def sparse_coding_gradient(A: Array, X: Array, D: Array,
                           graph: NeighborGraph | None, clf: Classifier,
                           P: Array, masks: ActiveMasks, Y: Array,
                           hp: HyperParams) -> Array:
    """Gradient of the smooth part of the coding objective at A."""
    return _coding_problem(X, D, graph, clf, P, masks, Y, hp).smooth_gradient(A)


def sparse_coding(A0: Array, X: Array, D: Array, graph: NeighborGraph | None,
                  clf: Classifier | None, P: Array | None,
                  masks: ActiveMasks | None, Y: Array | None, hp: HyperParams,
                  fista_params: FistaParams):
    """FISTA over all codes at once; returns (A, diagnostics)."""
    problem = _coding_problem(X, D, graph, clf, P, masks, Y, hp)
    return fista(problem, A0, fista_params)


def _batch_coding_problem(A: Array, cols: Array, X: Array, D: Array,
                          graph: NeighborGraph | None, clf: Classifier | None,
                          P: Array | None, masks: ActiveMasks | None,
                          Y: Array | None, hp: HyperParams) -> SmoothProxProblem:
    """Coding sub-problem restricted to the given columns, rest of A fixed.

    Only the manifold term couples columns; splitting L into batch and
    complement blocks turns the coupling into the fixed cross term
    2 beta tr(A_i L_ic A_c^T), whose gradient 2 beta A_c L_ic^T is
    precomputed once per batch.
    """
    N = A.shape[1]
    X_b = X[:, cols]
    use_graph = graph is not None and hp.beta != 0.0
    if use_graph:
        comp = np.setdiff1d(np.arange(N), cols, assume_unique=True)
        L_bb = graph.L[cols, :][:, cols]
        cross = (graph.L[comp, :][:, cols].T @ A[:, comp].T).T \
            if comp.size else np.zeros((A.shape[0], cols.size))

    use_clf = clf is not None and hp.gamma != 0.0
    if use_clf:
        C, N_l = Y.shape
        T = candidate_targets(C)
        bias = clf.b[:, None]
        in_l = cols < N_l
        bl = np.where(in_l)[0]
        bu = np.where(~in_l)[0]
        Y_b = Y[:, cols[bl]]
        Q_l_b = masks.labelled[:, cols[bl]]
        ju = cols[bu] - N_l
        Pr_b = (P[:, ju] ** hp.r) if ju.size else np.zeros((C, 0))
        QPr_b = masks.unlabelled[:, :, ju] * Pr_b[:, None, :] \
            if ju.size else None

    def smooth_value(A_b):
        R = X_b - D @ A_b
        v = float(np.vdot(R, R))
        if use_graph:
            v += hp.beta * (float(np.sum(A_b * (L_bb @ A_b.T).T))
                            + 2.0 * float(np.sum(A_b * cross)))
        if use_clf:
            if bl.size:
                rl = clf.W @ A_b[:, bl] + bias - Y_b
                v += hp.gamma * float(np.sum(Q_l_b * rl * rl))
            if bu.size:
                ru = (clf.W @ A_b[:, bu] + bias)[None, :, :] - T[:, :, None]
                v += hp.gamma * float(np.sum(QPr_b * ru * ru))
        return v

    def smooth_gradient(A_b):
        G = -2.0 * (D.T @ (X_b - D @ A_b))
        if use_graph:
            G += (2.0 * hp.beta) * ((L_bb @ A_b.T).T + cross)
        if use_clf:
            if bl.size:
                rl = clf.W @ A_b[:, bl] + bias - Y_b
                G[:, bl] += (2.0 * hp.gamma) * (clf.W.T @ (Q_l_b * rl))
            if bu.size:
                ru = (clf.W @ A_b[:, bu] + bias)[None, :, :] - T[:, :, None]
                G[:, bu] += (2.0 * hp.gamma) * (
                    clf.W.T @ np.sum(QPr_b * ru, axis=0))
        return G

    return SmoothProxProblem(
        smooth_value=smooth_value,
        smooth_gradient=smooth_gradient,
        prox=lambda M, step: soft_threshold(M, step * hp.lam),
        nonsmooth_value=lambda A_b: hp.lam * float(np.abs(A_b).sum()),
    )


def sparse_coding_batched(A0: Array, X: Array, D: Array,
                          graph: NeighborGraph | None, clf: Classifier | None,
                          P: Array | None, masks: ActiveMasks | None,
                          Y: Array | None, hp: HyperParams,
                          fista_params: FistaParams, batch_count: int,
                          epochs: int, rng: np.random.Generator) -> Array:
    """Batch-and-epoch sparse coding: per epoch, split columns into
    batch_count random batches and solve each with the rest of A fixed,
    writing the result back before the next batch."""
    if batch_count < 1 or epochs < 1:
        raise InvalidConfigurationError("batch_count and epochs must be >= 1")
    A = np.array(A0, dtype=float, copy=True)
    N = A.shape[1]
    for _ in range(epochs):
        perm = rng.permutation(N)
        for cols in np.array_split(perm, batch_count):
            cols = np.sort(cols)
            problem = _batch_coding_problem(A, cols, X, D, graph, clf, P,
                                            masks, Y, hp)
            A_b, _ = fista(problem, A[:, cols], fista_params)
            A[:, cols] = A_b
    return A


def dictionary_update(D0: Array, X: Array, A: Array, alpha: float,
                      fista_params: FistaParams):
    """min_{D in C} ||X - DA||_F^2 by FISTA with column-norm projection."""
    AT = A.T

    def smooth_value(D):
        R = X - D @ A
        return float(np.vdot(R, R))

    def smooth_gradient(D):
        return -2.0 * ((X - D @ A) @ AT)

    problem = SmoothProxProblem(
        smooth_value=smooth_value,
        smooth_gradient=smooth_gradient,
        prox=lambda M, step: project_columns_l2(M, alpha),
    )
    return fista(problem, project_columns_l2(D0, alpha), fista_params)


def classifier_update(A: Array, Y: Array, P: Array, masks: ActiveMasks,
                      gamma: float, mu: float, r: float) -> Classifier:
    """Weighted ridge over (w_c, b_c) per class, masks and P frozen.

    Labelled sample i enters class c's system with weight gamma * Q_l[c, i]
    and target y_i^c; unlabelled sample j enters once per candidate class k
    with weight gamma * Q_k[c, j] * P[k, j]^r and target y^c(k).  Solved by
    the (p+1) x (p+1) normal equations; mu = 0 falls back to the least-norm
    solution.
    """
    C, N_l = Y.shape
    p = A.shape[0]
    N_u = A.shape[1] - N_l
    Aug_l = np.vstack([A[:, :N_l], np.ones((1, N_l))])
    if N_u:
        Aug_u = np.vstack([A[:, N_l:], np.ones((1, N_u))])
        Pr = P ** r
    T = candidate_targets(C)
    W = np.zeros((C, p))
    b = np.zeros(C)
    for c in range(C):
        w_l = gamma * masks.labelled[c]
        G = (Aug_l * w_l) @ Aug_l.T
        rhs = Aug_l @ (w_l * Y[c])
        if N_u:
            w_u = gamma * masks.unlabelled[:, c, :] * Pr    # (C, N_u)
            total = w_u.sum(axis=0)
            G += (Aug_u * total) @ Aug_u.T
            rhs += Aug_u @ (w_u * T[:, c][:, None]).sum(axis=0)
        G[np.diag_indices_from(G)] += mu
        if mu > 0:
            sol = np.linalg.solve(G, rhs)
        else:
            sol = np.linalg.lstsq(G, rhs, rcond=None)[0]
        W[c] = sol[:p]
        b[c] = sol[p]
    return Classifier(W=W, b=b)


def classifier_init(A_l: Array, Y: Array, gamma: float, mu: float) -> Classifier:
    """Closed-form ridge fit on labelled codes (all samples active).

    With the bias folded in as an all-ones row of the augmented code matrix,
    W' = Y A*^T (A* A*^T + (mu/gamma) I)^{-1}.
    """
    if gamma <= 0:
        raise InvalidConfigurationError("gamma must be positive")
    p, N_l = A_l.shape
    Aug = np.vstack([A_l, np.ones((1, N_l))])
    G = Aug @ Aug.T
    G[np.diag_indices_from(G)] += mu / gamma
    if mu > 0:
        Wp = np.linalg.solve(G, Aug @ Y.T).T
    else:
        Wp = np.linalg.lstsq(G, Aug @ Y.T, rcond=None)[0].T
    return Classifier(W=Wp[:, :p], b=Wp[:, p])


def lipschitz_estimate(D: Array, graph: NeighborGraph | None, W: Array,
                       beta: float, gamma: float, C: int) -> float:
    """2 (||D^T D|| + beta ||L|| + gamma C ||W||^2), spectral norms by power
    iteration.  Diagnostic only; the solver's backtracking sets the step."""
    val = solver.spectral_norm(D) ** 2
    if graph is not None and beta != 0.0:
        val += beta * solver.spectral_norm(graph.L)
    if gamma != 0.0:
        val += gamma * C * solver.spectral_norm(W) ** 2
    return 2.0 * val
