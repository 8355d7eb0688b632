from sfcnn.model.architecture import Architecture
from sfcnn.model.network import (
    ForwardTrace,
    ModelParams,
    backward,
    backward_with_input,
    conv_block_forward,
    forward,
    forward_batch,
    init_params,
)
from sfcnn.model.serialize import ModelBundle, load_bundle, load_model, save_model

__all__ = [
    "Architecture",
    "ForwardTrace",
    "ModelBundle",
    "ModelParams",
    "backward",
    "backward_with_input",
    "conv_block_forward",
    "forward",
    "forward_batch",
    "init_params",
    "load_bundle",
    "load_model",
    "save_model",
]
