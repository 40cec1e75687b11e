from .layers import (
    ACTIVATIONS,
    ConvParticipants,
    Dense,
    Dropout,
    GatLayer,
    GcnLayer,
    Lstm,
    NumericalError,
    Parameter,
    bce_loss,
    l2_prob_loss,
    normalize_adjacency,
    sigmoid,
)
from .optim import AdamOptimizer, EarlyStopper, TrainConfig, adam_step
from .serialize import params_from_json, params_to_json

__all__ = [
    "ACTIVATIONS",
    "AdamOptimizer",
    "ConvParticipants",
    "Dense",
    "Dropout",
    "EarlyStopper",
    "GatLayer",
    "GcnLayer",
    "Lstm",
    "NumericalError",
    "Parameter",
    "TrainConfig",
    "adam_step",
    "bce_loss",
    "l2_prob_loss",
    "normalize_adjacency",
    "params_from_json",
    "params_to_json",
    "sigmoid",
]
