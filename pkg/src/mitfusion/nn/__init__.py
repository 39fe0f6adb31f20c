"""Small NumPy neural-network engine with explicit backpropagation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradReport, gradient_check, numeric_gradient, relative_error
from .layers import BatchNorm, Conv2d, Dense, Flatten, GlobalAvgPool, Layer, MaxPool2x2, ReLU, conv3x3
from .losses import hinge_ovr_loss, huber_loss, log_softmax, softmax, softmax_cross_entropy, squared_error
from .network import Sequential
from .optim import SGD, Adam, make_optimizer, sgd_step
from .train import build_mlp, fit_network, minibatches

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Flatten",
    "GlobalAvgPool",
    "GradReport",
    "Layer",
    "MaxPool2x2",
    "ReLU",
    "SGD",
    "Sequential",
    "build_mlp",
    "conv3x3",
    "fit_network",
    "gradient_check",
    "hinge_ovr_loss",
    "huber_loss",
    "load_checkpoint",
    "log_softmax",
    "make_optimizer",
    "minibatches",
    "numeric_gradient",
    "relative_error",
    "save_checkpoint",
    "sgd_step",
    "softmax",
    "softmax_cross_entropy",
    "squared_error",
]
