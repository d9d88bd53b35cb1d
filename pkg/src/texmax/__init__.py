"""Texture-based maximal images and attribute-phrase descriptions for image categories."""

from .backbone import BackboneSpec, backward_to_image, forward_taps, load_backbone, make_filter_bank, save_backbone
from .descriptor import TextureDescriptor, descriptor_backward, descriptor_forward, pool_second_order
from .errors import ConfigError, DataError, FormatError, NumericError, TexmaxError
from .heads import PhraseModel, SoftmaxHead, TrainConfig, predict_proba, score_phrases, train_phrases, train_softmax
from .inversion import InversionConfig, InversionTrace, objective, oriented_energy_ratio, synthesize_maximal_image, tv_norm
from .numerics import ConvLayerSpec, conv2d_backward, conv2d_forward, gradcheck, maxpool2_backward, maxpool2_forward

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "backward_to_image",
    "forward_taps",
    "load_backbone",
    "make_filter_bank",
    "save_backbone",
    "TextureDescriptor",
    "descriptor_backward",
    "descriptor_forward",
    "pool_second_order",
    "ConfigError",
    "DataError",
    "FormatError",
    "NumericError",
    "TexmaxError",
    "PhraseModel",
    "SoftmaxHead",
    "TrainConfig",
    "predict_proba",
    "score_phrases",
    "train_phrases",
    "train_softmax",
    "InversionConfig",
    "InversionTrace",
    "objective",
    "oriented_energy_ratio",
    "synthesize_maximal_image",
    "tv_norm",
    "ConvLayerSpec",
    "conv2d_backward",
    "conv2d_forward",
    "gradcheck",
    "maxpool2_backward",
    "maxpool2_forward",
]
