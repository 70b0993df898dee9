"""Semi-supervised dictionary learning with graph-regularized sparse codes.

Learns a shared dictionary, sparse codes, a one-vs-all linear classifier and
unlabelled-class probabilities by alternating minimization, preserving the
local manifold structure of the input space in code space.
"""

from .data import (LabeledDataset, Split, SplitSpec, add_gaussian_noise,
                   labels_to_matrix, load_delimited, load_idx,
                   load_idx_images, load_idx_labels, load_usps, preprocess,
                   random_projection, split, synthetic_blobs)
from .graph import (GaussianGraphParams, NeighborGraph, barycentric_weights,
                    build_gaussian_knn_laplacian, build_lle_graph,
                    build_threshold_laplacian, knn_indices,
                    laplacian_quadratic)
from .inference import EncodedSample, encode, predict, predict_batch
from .model import (ActiveMasks, Classifier, HyperParams, classifier_init,
                    classifier_update, dictionary_update, lipschitz_estimate,
                    objective, sparse_coding, sparse_coding_batched,
                    sparse_coding_gradient, update_active_masks,
                    update_probabilities)
from .solver import (FistaParams, SmoothProxProblem, fista,
                     project_columns_l2, soft_threshold)
from .trainer import (BatchSpec, ModelState, TrainConfig, init_codes,
                      init_dictionary, load_model, save_model, train)

__all__ = [
    "LabeledDataset", "Split", "SplitSpec", "add_gaussian_noise",
    "labels_to_matrix", "load_delimited", "load_idx", "load_idx_images",
    "load_idx_labels", "load_usps", "preprocess", "random_projection",
    "split", "synthetic_blobs",
    "GaussianGraphParams", "NeighborGraph", "barycentric_weights",
    "build_gaussian_knn_laplacian", "build_lle_graph",
    "build_threshold_laplacian", "knn_indices", "laplacian_quadratic",
    "EncodedSample", "encode", "predict", "predict_batch",
    "ActiveMasks", "Classifier", "HyperParams", "classifier_init",
    "classifier_update", "dictionary_update", "lipschitz_estimate",
    "objective", "sparse_coding", "sparse_coding_batched",
    "sparse_coding_gradient", "update_active_masks", "update_probabilities",
    "FistaParams", "SmoothProxProblem", "fista", "project_columns_l2",
    "soft_threshold",
    "BatchSpec", "ModelState", "TrainConfig", "init_codes",
    "init_dictionary", "load_model", "save_model", "train",
]

__version__ = "0.1.0"
