from ._checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ._encoder import Encoder, EncoderConfig, ForwardCache, init_params
from ._functional import cosine
from ._optim import Adam, gradient_check, relative_error, warmup_lr
from ._params import ParamSet

__all__ = [
    "Adam",
    "Checkpoint",
    "Encoder",
    "EncoderConfig",
    "ForwardCache",
    "ParamSet",
    "cosine",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "relative_error",
    "save_checkpoint",
    "warmup_lr",
]
