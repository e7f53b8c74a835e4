from .optim import Adam, AdamState
from .rng import substream
from .tensor import (
    NumericalError,
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    dropout,
    layer_norm,
    log_softmax,
    masked_softmax,
    set_default_dtype,
    softmax,
    take,
)

__all__ = [
    "Adam",
    "AdamState",
    "NumericalError",
    "Tensor",
    "as_tensor",
    "concat",
    "default_dtype",
    "dropout",
    "layer_norm",
    "log_softmax",
    "masked_softmax",
    "set_default_dtype",
    "softmax",
    "substream",
    "take",
]
