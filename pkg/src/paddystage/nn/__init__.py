"""From-scratch feed-forward networks: dense, 1-D conv, batch norm, dropout."""

from .layers import (
    BatchNorm, Conv1D, Dense, Dropout, Flatten, Layer, ReLU, Reshape, Sigmoid, Softmax,
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, conv1d_forward,
    dense_forward, dropout_forward, softmax,
)
from .network import (
    Network, TrainConfig, TrainingDivergedError, build_cnn, build_dnn, build_softmax_regression,
    predict, predict_proba, sgd_step, softmax_cross_entropy, train,
)
from .serialize import load_network, network_from_sections, network_sections, save_network

__all__ = [
    "BatchNorm", "Conv1D", "Dense", "Dropout", "Flatten", "Layer", "ReLU", "Reshape", "Sigmoid",
    "Softmax", "Network", "TrainConfig", "TrainingDivergedError", "batchnorm_backward",
    "batchnorm_forward_infer", "batchnorm_forward_train", "build_cnn", "build_dnn",
    "build_softmax_regression", "conv1d_forward", "dense_forward", "dropout_forward",
    "load_network", "network_from_sections", "network_sections", "predict", "predict_proba", "save_network", "sgd_step", "softmax",
    "softmax_cross_entropy", "train",
]
