from .mle import MLEModel, infer_mle, mle_accuracy, train_mle
from .mlp import (
    HIDDEN_LAYER_COUNTS,
    HIDDEN_WIDTHS,
    REFERENCE_HIDDEN,
    MLPArchitecture,
    MLPModel,
    SearchFailed,
    SearchResult,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    architecture_search,
    forward,
    init_model,
    loss_and_grads,
    search_space,
    select_best,
    softmax,
    train,
)
from .serialize import IncompatibleModelError, ModelFormatError, load_model, save_model

__all__ = [
    "HIDDEN_LAYER_COUNTS",
    "HIDDEN_WIDTHS",
    "REFERENCE_HIDDEN",
    "IncompatibleModelError",
    "MLEModel",
    "MLPArchitecture",
    "MLPModel",
    "ModelFormatError",
    "SearchFailed",
    "SearchResult",
    "TrainConfig",
    "TrainingDiverged",
    "accuracy",
    "architecture_search",
    "forward",
    "infer_mle",
    "init_model",
    "load_model",
    "loss_and_grads",
    "mle_accuracy",
    "save_model",
    "search_space",
    "select_best",
    "softmax",
    "train",
    "train_mle",
]
