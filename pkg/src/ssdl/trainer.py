"""Alternating-minimization training loop and model persistence.

One outer iteration updates, in order: active masks, class probabilities,
sparse codes, dictionary, classifier.  Masks and probabilities are frozen
while the remaining three blocks run, so the objective cannot increase across
those steps; it may tick up slightly when masks are refreshed at the top of
the next iteration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (InvalidConfigurationError, ModelFormatError,
                     ModelShapeError, ModelTruncatedError,
                     ModelVersionError, NumericalError)
from .graph import NeighborGraph, build_lle_graph
from .model import (ActiveMasks, Classifier, HyperParams, classifier_init,
                    classifier_update, dictionary_update, objective,
                    sparse_coding, sparse_coding_batched, update_active_masks,
                    update_probabilities)
from .solver import FistaParams, project_columns_l2

Array = np.ndarray

_MAGIC = b"SSDLMDL\x00"
_VERSION = 1


@dataclass
class BatchSpec:
    """Batch-and-epoch schedule for the sparse-coding step."""

    count: int
    epochs: int


@dataclass
class TrainConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    outer_max_iters: int = 30
    outer_rel_tol: float = 1e-4
    fista: FistaParams = field(default_factory=FistaParams)
    batching: BatchSpec | None = None
    seed: int = 0
    # iterations run with beta = 0 before rebuilding the graph from the
    # denoised reconstructions D A; 0 disables the warm-up entirely
    denoise_warmup: int = 0

    def __post_init__(self):
        if self.outer_max_iters < 1:
            raise InvalidConfigurationError("outer_max_iters must be >= 1")
        if self.outer_rel_tol < 0:
            raise InvalidConfigurationError("outer_rel_tol must be >= 0")


@dataclass
class ModelState:
    """Everything the training loop produces.

    history holds the full objective after each outer iteration;
    step_history holds, per iteration, the objective right after the
    mask/probability refresh and after each of the coding, dictionary and
    classifier steps (the non-increasing segment).
    """

    D: Array
    A: Array
    clf: Classifier
    P: Array
    masks: ActiveMasks | None
    graph: NeighborGraph
    n_labelled: int
    hp: HyperParams
    X: Array
    history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)


def init_dictionary(X: Array, labels: Array, p: int, alpha: float,
                    rng: np.random.Generator) -> Array:
    """Select p initial atoms from the samples and bound their norms.

    With more atoms than labelled samples, every labelled sample becomes an
    atom and the remainder is drawn uniformly from the unlabelled columns.
    Otherwise classes are cycled in order, drawing one not-yet-chosen
    labelled sample per class until p atoms are selected (classes that run
    out are skipped).
    """
    N = X.shape[1]
    N_l = len(labels)
    if p > N:
        raise InvalidConfigurationError(
            f"cannot select {p} atoms from {N} samples")
    if p > N_l:
        extra = rng.choice(np.arange(N_l, N), size=p - N_l, replace=False)
        cols = np.concatenate([np.arange(N_l), extra])
    else:
        classes = np.unique(labels)
        pools = [rng.permutation(np.where(labels == c)[0]).tolist()
                 for c in classes]
        cols = []
        while len(cols) < p:
            for pool in pools:
                if pool and len(cols) < p:
                    cols.append(pool.pop())
        cols = np.array(cols)
    return project_columns_l2(X[:, cols].astype(float), alpha)


def init_codes(X: Array, D: Array, lam: float,
               fista_params: FistaParams) -> Array:
    """Initial codes from the plain lasso min ||X - DA||_F^2 + lam ||A||_1."""
    hp = HyperParams(lam=lam, beta=0.0, gamma=0.0, mu=0.0,
                     p=D.shape[1], k=1)
    A0 = np.zeros((D.shape[1], X.shape[1]))
    A, _ = sparse_coding(A0, X, D, None, None, None, None, None, hp,
                         fista_params)
    return A


def train(X: Array, Y: Array, config: TrainConfig) -> ModelState:
    """Run the full alternating loop on X = [X_l, X_u] with labels Y.

    Y is the (C, N_l) +/-1 label matrix for the leading labelled columns.
    Deterministic for a fixed config.seed.
    """
    hp = config.hp
    n, N = X.shape
    C, N_l = Y.shape
    N_u = N - N_l
    if not np.all((Y == 1).sum(axis=1) >= 1):
        raise InvalidConfigurationError(
            "every class needs at least one labelled sample")

    rng = np.random.default_rng(config.seed)
    graph = build_lle_graph(X, hp.k, trace_target=float(N))
    labels = np.argmax(Y, axis=0)
    D = init_dictionary(X, labels, hp.p, hp.alpha, rng)
    A = init_codes(X, D, hp.lam, config.fista)
    if hp.gamma > 0:
        clf = classifier_init(A[:, :N_l], Y, hp.gamma, hp.mu)
    else:
        clf = Classifier(W=np.zeros((C, hp.p)), b=np.zeros(C))
    P = np.full((C, N_u), 1.0 / C)

    history = []
    step_history = []
    prev = None
    masks = None
    for it in range(config.outer_max_iters):
        if config.denoise_warmup and it == config.denoise_warmup:
            graph = build_lle_graph(D @ A, hp.k, trace_target=float(N))
        hp_it = hp if it >= config.denoise_warmup else \
            HyperParams(lam=hp.lam, beta=0.0, gamma=hp.gamma, mu=hp.mu,
                        alpha=hp.alpha, p=hp.p, k=hp.k, r=hp.r)

        masks = update_active_masks(clf, A, Y, N_u)
        if N_u:
            P = update_probabilities(clf, A[:, N_l:], masks, hp.r)
        obj_masks = objective(X, D, A, graph, clf, P, masks, Y, hp_it)

        if config.batching is not None:
            A = sparse_coding_batched(A, X, D, graph, clf, P, masks, Y, hp_it,
                                      config.fista, config.batching.count,
                                      config.batching.epochs, rng)
        else:
            A, _ = sparse_coding(A, X, D, graph, clf, P, masks, Y, hp_it,
                                 config.fista)
        obj_coding = objective(X, D, A, graph, clf, P, masks, Y, hp_it)

        D, _ = dictionary_update(D, X, A, hp.alpha, config.fista)
        obj_dict = objective(X, D, A, graph, clf, P, masks, Y, hp_it)

        clf = classifier_update(A, Y, P, masks, hp.gamma, hp.mu, hp.r)
        obj_clf = objective(X, D, A, graph, clf, P, masks, Y, hp_it)

        step_history.append((obj_masks, obj_coding, obj_dict, obj_clf))
        history.append(obj_clf)
        if not np.isfinite(obj_clf):
            raise NumericalError("objective diverged", iteration=it,
                                 history=history)
        if prev is not None and it >= config.denoise_warmup and \
                abs(prev - obj_clf) <= config.outer_rel_tol * max(1.0, abs(prev)):
            break
        prev = obj_clf

    return ModelState(D=D, A=A, clf=clf, P=P, masks=masks, graph=graph,
                      n_labelled=N_l, hp=hp, history=history,
                      step_history=step_history, X=X)


def _write_matrix(f, M: Array):
    f.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def _read_exact(f, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise ModelTruncatedError(
            f"expected {count} more bytes, found {len(buf)}")
    return buf


def _read_matrix(f, shape) -> Array:
    n_items = int(np.prod(shape))
    buf = _read_exact(f, 8 * n_items)
    return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()


def save_model(state: ModelState, path: str):
    """Serialize the model container.

    Layout: magic, version, int64 dims (n, p, N_l, N_u, C, k), float64
    scalars (omega, lam, beta), then row-major little-endian float64 payloads
    D, A, W, b, P, V and finally the training samples X (kept so that
    out-of-sample coding can find neighbors among them).
    """
    n, p = state.D.shape
    C = state.clf.W.shape[0]
    N_l = state.n_labelled
    N_u = state.A.shape[1] - N_l
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<i", _VERSION))
        f.write(struct.pack("<6q", n, p, N_l, N_u, C, state.hp.k))
        f.write(struct.pack("<3d", state.graph.omega, state.hp.lam,
                            state.hp.beta))
        _write_matrix(f, state.D)
        _write_matrix(f, state.A)
        _write_matrix(f, state.clf.W)
        _write_matrix(f, state.clf.b)
        _write_matrix(f, state.P)
        _write_matrix(f, state.graph.V.toarray())
        _write_matrix(f, state.X)


def load_model(path: str) -> ModelState:
    """Read a container written by save_model.

    The Laplacian is rebuilt from the stored weight matrix and scaled by the
    stored omega; masks and history are not part of the container.
    """
    with open(path, "rb") as f:
        magic = _read_exact(f, len(_MAGIC))
        if magic != _MAGIC:
            raise ModelFormatError("not a model container (bad magic)")
        version = struct.unpack("<i", _read_exact(f, 4))[0]
        if version != _VERSION:
            raise ModelVersionError(f"unsupported container version {version}")
        n, p, N_l, N_u, C, k = struct.unpack("<6q", _read_exact(f, 48))
        if min(n, p, N_l, C, k) < 1 or N_u < 0:
            raise ModelShapeError(
                f"inconsistent dimensions {(n, p, N_l, N_u, C, k)}")
        omega, lam, beta = struct.unpack("<3d", _read_exact(f, 24))
        N = N_l + N_u
        D = _read_matrix(f, (n, p))
        A = _read_matrix(f, (p, N))
        W = _read_matrix(f, (C, p))
        b = _read_matrix(f, (C,))
        P = _read_matrix(f, (C, N_u))
        V = sparse.csr_array(_read_matrix(f, (N, N)))
        X = _read_matrix(f, (n, N))

    M = sparse.eye_array(N, format="csr") - V
    L = sparse.csr_array(M.T @ M) * omega
    graph = NeighborGraph(k=int(k), indices=None, V=V, L=sparse.csr_array(L),
                          omega=omega, empty=(omega == 0.0))
    hp = HyperParams(lam=lam, beta=beta, k=int(k), p=int(p))
    return ModelState(D=D, A=A, clf=Classifier(W=W, b=b), P=P, masks=None,
                      graph=graph, n_labelled=int(N_l), hp=hp, X=X)
