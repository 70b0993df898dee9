"""Out-of-sample coding and class prediction.

A new sample is coded against the trained dictionary with the same manifold
anchor used during training: its k nearest training samples supply
barycentric weights, and the code is pulled toward the matching combination
of training codes,

    min_a ||x - D a||^2 + beta * omega * ||a - m||^2 + lam ||a||_1,

with m = sum_j w_j a_j and omega the trace-normalization factor of the
training graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .graph import barycentric_weights
from .model import Classifier, HyperParams
from .solver import FistaParams, SmoothProxProblem, fista, soft_threshold

Array = np.ndarray


@dataclass
class EncodedSample:
    code: Array
    neighbor_ids: Array
    weights: Array


def encode_anchored(x: Array, D: Array, lam: float, coeff: float,
                    anchor: Array | None, fista_params: FistaParams) -> Array:
    """Lasso coding with an optional quadratic pull toward an anchor code."""
    p = D.shape[1]
    use_anchor = anchor is not None and coeff > 0.0

    def smooth_value(a):
        r = x - D @ a
        v = float(r @ r)
        if use_anchor:
            d = a - anchor
            v += coeff * float(d @ d)
        return v

    def smooth_gradient(a):
        g = -2.0 * (D.T @ (x - D @ a))
        if use_anchor:
            g += (2.0 * coeff) * (a - anchor)
        return g

    problem = SmoothProxProblem(
        smooth_value=smooth_value,
        smooth_gradient=smooth_gradient,
        prox=lambda v, step: soft_threshold(v, step * lam),
        nonsmooth_value=lambda a: lam * float(np.abs(a).sum()),
    )
    a, _ = fista(problem, np.zeros(p), fista_params)
    return a


def nearest_training_indices(x: Array, X_train: Array, k: int) -> Array:
    """Indices of the k nearest training columns to x (ties: lower index)."""
    d2 = cdist(x[None, :] if x.ndim == 1 else x.T, X_train.T,
               "sqeuclidean")[0]
    return np.argsort(d2, kind="stable")[:k]


def encode(x_new: Array, D: Array, A_train: Array, X_train: Array,
           hp: HyperParams, fista_params: FistaParams,
           omega: float = 1.0) -> EncodedSample:
    """Code one new sample with the manifold-anchored lasso above."""
    nn = nearest_training_indices(x_new, X_train, hp.k)
    w = barycentric_weights(x_new, X_train[:, nn])
    anchor = A_train[:, nn] @ w
    code = encode_anchored(x_new, D, hp.lam, hp.beta * omega, anchor,
                           fista_params)
    return EncodedSample(code=code, neighbor_ids=nn, weights=w)


def predict(clf: Classifier, code: Array) -> int:
    """argmax class score; ties resolve to the lowest class index."""
    return int(np.argmax(clf.W @ code + clf.b))


def predict_batch(clf: Classifier, D: Array, A_train: Array, X_train: Array,
                  X_new: Array, hp: HyperParams,
                  fista_params: FistaParams, omega: float = 1.0):
    """encode + predict per column; returns (classes, scores)."""
    M = X_new.shape[1]
    C = clf.W.shape[0]
    classes = np.zeros(M, dtype=int)
    scores = np.zeros((C, M))
    for j in range(M):
        enc = encode(X_new[:, j], D, A_train, X_train, hp, fista_params,
                     omega)
        scores[:, j] = clf.W @ enc.code + clf.b
        classes[j] = int(np.argmax(scores[:, j]))
    return classes, scores
