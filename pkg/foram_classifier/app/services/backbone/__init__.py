# Feature extraction backbones: builtin SmallConvNet and the ONNX interchange graph
from .convnet import SmallConvNet
from .features import build_feature_streams, split_features
from .finetune import FinetuneResult, JointConfig, finetune, pretrain_builtin
from .handle import (
    BUILTIN,
    PRETRAINED,
    BackboneHandle,
    builtin_handle,
    extract_features,
    load_backbone,
    load_builtin_net,
    preprocess,
    save_builtin,
)

__all__ = [
    "BUILTIN",
    "PRETRAINED",
    "BackboneHandle",
    "FinetuneResult",
    "JointConfig",
    "SmallConvNet",
    "build_feature_streams",
    "builtin_handle",
    "extract_features",
    "finetune",
    "load_backbone",
    "load_builtin_net",
    "preprocess",
    "pretrain_builtin",
    "save_builtin",
    "split_features",
]
