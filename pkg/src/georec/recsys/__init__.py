"""Recommendation models: the context-gated VAE and its baselines."""

from .baselines import (
    GLOBAL_KEY,
    MP_SCOPES,
    ImfConfig,
    ImfModel,
    MpModel,
    imf_fold_in,
    imf_recommend,
    imf_train,
    mp_recommend,
    mp_train,
)
from .vae import (
    SIGMA_SQ_FLOOR,
    WEIGHT_NAMES,
    GatedVae,
    TrainReport,
    VaeConfig,
    forward,
    gradients,
    init_weights,
    loss,
    loss_terms,
    preprocess,
    recommend,
    train,
)

__all__ = [
    "GLOBAL_KEY",
    "MP_SCOPES",
    "SIGMA_SQ_FLOOR",
    "WEIGHT_NAMES",
    "GatedVae",
    "ImfConfig",
    "ImfModel",
    "MpModel",
    "TrainReport",
    "VaeConfig",
    "forward",
    "gradients",
    "imf_fold_in",
    "imf_recommend",
    "imf_train",
    "init_weights",
    "loss",
    "loss_terms",
    "mp_recommend",
    "mp_train",
    "preprocess",
    "recommend",
    "train",
]
