from .adam import Adam
from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, ShapeError, Softmax
from .network import Network, Tape, count_params, cross_entropy, init_params, one_hot

__all__ = [
    "Adam",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2D",
    "Network",
    "ReLU",
    "ShapeError",
    "Softmax",
    "Tape",
    "count_params",
    "cross_entropy",
    "init_params",
    "one_hot",
]
